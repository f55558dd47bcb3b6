import numpy as np
import pytest

from blindqc import qsim, shor
from blindqc.shor import (
    SHOR_15,
    FactoringInstance,
    InstanceError,
    PeriodReadout,
    SharedFactorError,
    classical_order,
    postprocess,
    validate_instance,
)


def test_order_of_11_mod_15():
    assert pow(11, 2, 15) == 1
    assert classical_order(11, 15) == 2
    assert classical_order(7, 15) == 4
    with pytest.raises(InstanceError):
        classical_order(5, 15)


def test_validate_instance():
    assert validate_instance(15, 11) == SHOR_15
    with pytest.raises(SharedFactorError) as exc:
        validate_instance(15, 6)
    assert exc.value.factor == 3
    for N, a in [(15, 1), (15, 15), (15, 20), (1, 2)]:
        with pytest.raises(InstanceError):
            validate_instance(N, a)


def test_readout_numerator():
    assert PeriodReadout(1).numerator == 2
    assert PeriodReadout(0).numerator == 0
    assert PeriodReadout(1, (1,)).numerator == 3
    with pytest.raises(ValueError):
        PeriodReadout(2)


def test_readout_one_factors_15():
    # k = 2 out of 2^2 gives r = 2 and gcd(11 -/+ 1, 15) = (5, 3)
    r = postprocess(PeriodReadout(1), SHOR_15)
    assert r.success and r.factors == (3, 5) and r.period == 2
    assert r.factors[0] * r.factors[1] == 15


def test_readout_zero_fails():
    r = postprocess(PeriodReadout(0), SHOR_15)
    assert not r.success and r.factors == ()


def test_width_mismatch():
    with pytest.raises(ValueError):
        postprocess(PeriodReadout(1, (0, 0)), SHOR_15)


def test_single_bit_register():
    inst = FactoringInstance(15, 11, m=1)
    r = postprocess(PeriodReadout(1, ()), inst)
    assert r.period == 2 and r.success


def test_trivial_half_power_fails():
    # a = 14: 14^1 = -1 mod 15, so even period 2 yields nothing
    r = postprocess(PeriodReadout(1), FactoringInstance(15, 14))
    assert not r.success and r.period == 2


def test_compiled_circuit_output_is_uniform():
    bits = shor.run_compiled(20000, np.random.default_rng(0))
    assert set(np.unique(bits)) <= {0, 1}
    assert bits.mean() == pytest.approx(0.5, abs=0.015)


def test_compiled_circuit_state():
    s = qsim.new_register(shor.CIRCUIT_QUBITS)
    for g in shor.compiled_circuit():
        s = qsim.apply_gate(s, g)
    # GHZ-like: (|000> + |111>)/sqrt(2)
    np.testing.assert_allclose(np.abs(s.amplitudes[[0, 7]]) ** 2, [0.5, 0.5])
    assert qsim.expectation(s, {"q2": "X"}) == pytest.approx(0.0)


@pytest.mark.parametrize("a,r", [(11, 2), (2, 4), (14, 2)])
def test_reference_orders(a, r):
    assert classical_order(a, 15) == r


def test_reference_instances():
    assert validate_instance(15, 14).a == 14
    with pytest.raises(SharedFactorError) as exc:
        validate_instance(15, 3)
    assert exc.value.factor == 3
