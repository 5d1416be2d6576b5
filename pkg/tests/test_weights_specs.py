import math

import numpy as np
import pytest
from scipy import integrate

from tanglesim import specs
from tanglesim.weights import WeightFunction, make_weight


@pytest.mark.parametrize("w", [WeightFunction.constant(2.0),
                               WeightFunction.exponential(1.5),
                               WeightFunction.power(2.0),
                               WeightFunction.power(1.0)])
def test_G_is_running_integral_of_g(w):
    for s in (0.0, 0.3, 2.0, 7.5):
        ref = integrate.quad(lambda u: float(w.g(u)), 0, s)[0]
        assert float(w.G(s)) == pytest.approx(ref, rel=1e-9, abs=1e-12)


def test_totals_and_tails():
    assert WeightFunction.exponential(2.0).total == 0.5
    assert WeightFunction.exponential(1.0).tail(3.0) == pytest.approx(
        math.exp(-3.0))
    assert not WeightFunction.constant().integrable
    assert WeightFunction.constant().tail(1.0) == math.inf
    assert WeightFunction.power(3.0).total == pytest.approx(0.5)
    assert not WeightFunction.power(1.0).integrable


def test_from_callable_uses_quadrature():
    w = WeightFunction.from_callable(lambda s: math.exp(-2 * s))
    assert w.total == pytest.approx(0.5)
    assert w.G(1.0) == pytest.approx((1 - math.exp(-2)) / 2)
    assert np.allclose(w.G(np.array([0.0, 1.0])),
                       [0.0, (1 - math.exp(-2)) / 2])


def test_bad_parameters():
    for f, arg in ((WeightFunction.constant, 0.0),
                   (WeightFunction.exponential, -1.0),
                   (WeightFunction.power, 0.0)):
        with pytest.raises(ValueError):
            f(arg)
    with pytest.raises(ValueError):
        make_weight("cosine")
    no_mass = WeightFunction.from_callable(lambda s: 0.0 if s < 2 else 1.0,
                                           integrable=False)
    with pytest.raises(ValueError):
        no_mass.check(1.0)


def test_make_weight_and_spec():
    w = make_weight("exp", beta=2)
    assert w.spec() == "exp{beta=2.0}"
    assert make_weight("const").spec() == "const"
    assert w == make_weight("exp", beta=2.0)


def test_spec_parser_nesting():
    assert specs.parse("hybrid{mcmc{alpha=1},age{exp,beta=2}}") == (
        "hybrid", ["mcmc{alpha=1}", "age{exp,beta=2}"], {})
    assert specs.parse("uniform") == ("uniform", [], {})
    assert specs.parse("mcmc{alpha=0.1}") == ("mcmc", [], {"alpha": "0.1"})
    for bad in ("mcmc{", "mcmc}", "{x}", "mcmc{alpha=1}x"):
        with pytest.raises(specs.SpecError):
            specs.parse(bad)
    assert specs.to_number("3") == 3 and specs.to_number("0.5") == 0.5
