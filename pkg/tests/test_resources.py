import math

import numpy as np
import pytest

from blindqc import qsim
from blindqc.resources import (
    DEFAULT_OWNERSHIP,
    IDEAL,
    NoiseModel,
    OwnershipMap,
    Server,
    distribute_batch,
    distribute_pairs,
    effective_basis,
    hwp_to_bloch,
    ideal_pairs,
)


class TestOwnership:
    def test_default_labels(self):
        assert DEFAULT_OWNERSHIP.labels == ("1A", "2A", "3A", "1B", "2B", "3B")
        assert DEFAULT_OWNERSHIP.pairs == (("1A", "1B"), ("2A", "2B"), ("3A", "3B"))

    def test_label_and_owner(self):
        assert DEFAULT_OWNERSHIP.label(Server.BOB, 2) == "2B"
        assert DEFAULT_OWNERSHIP.owner("3A") is Server.ALICE
        assert DEFAULT_OWNERSHIP.owner("9Z") is None
        with pytest.raises(IndexError):
            DEFAULT_OWNERSHIP.label(Server.ALICE, 4)
        with pytest.raises(IndexError):
            DEFAULT_OWNERSHIP.label(Server.ALICE, 0)

    def test_server_other(self):
        assert Server.ALICE.other is Server.BOB and Server.BOB.other is Server.ALICE

    def test_custom_ownership(self):
        own = OwnershipMap(("a1", "a2", "a3"), ("b1", "b2", "b3"))
        reg = distribute_batch(IDEAL, 1, np.random.default_rng(0), own)
        assert reg.vector().qubit_labels == ("a1", "a2", "a3", "b1", "b2", "b3")


class TestNoiseModel:
    def test_defaults_are_ideal(self):
        assert IDEAL.is_ideal and NoiseModel().werner_p == 1.0
        assert not NoiseModel(werner_p=0.9).is_ideal

    @pytest.mark.parametrize("kw", [{"werner_p": -0.1}, {"werner_p": 1.5}, {"bob_angle_offset": 4.0}, {"alice_angle_offset": -math.pi}])
    def test_validation(self, kw):
        with pytest.raises(ValueError):
            NoiseModel(**kw)

    def test_offset_lookup(self):
        n = NoiseModel(alice_angle_offset=0.1, bob_angle_offset=-0.2)
        assert n.offset(Server.ALICE) == 0.1 and n.offset(Server.BOB) == -0.2

    def test_hwp_conversion(self):
        # a half-wave plate turns polarization by twice its angle, which is four times on the Bloch sphere
        assert hwp_to_bloch(5.0) == pytest.approx(math.radians(20.0))
        assert hwp_to_bloch(22.5) == pytest.approx(math.pi / 2)

    def test_effective_basis(self):
        n = NoiseModel(bob_angle_offset=0.25)
        assert effective_basis(qsim.PAULI_Z, Server.BOB, n).angle == pytest.approx(0.25)
        assert effective_basis(qsim.PAULI_X, Server.ALICE, n).angle == pytest.approx(math.pi / 2)


class TestPairs:
    def test_ideal_pairs_are_phi_plus(self):
        s = ideal_pairs()
        for a, b in DEFAULT_OWNERSHIP.pairs:
            assert qsim.expectation(s, {a: "Z", b: "Z"}) == pytest.approx(1.0)
            assert qsim.expectation(s, {a: "X", b: "X"}) == pytest.approx(1.0)
            assert qsim.expectation(s, {a: "Z"}) == pytest.approx(0.0)

    def test_werner_correlator(self):
        # X and Y on one half flip ZZ, Z does not: <ZZ> = p - (1 - p)/3
        p = 0.7
        reg = distribute_batch(NoiseModel(werner_p=p), 40000, np.random.default_rng(11))
        zz = reg.state.expectation({"1A": "Z", "1B": "Z"})
        assert zz.mean() == pytest.approx((4 * p - 1) / 3, abs=0.015)

    def test_fully_depolarized_pairs_are_never_phi_plus(self):
        reg = distribute_batch(NoiseModel(werner_p=0.0), 200, np.random.default_rng(3))
        fid = np.abs(reg.state.amplitudes @ ideal_pairs().amplitudes.conj()) ** 2
        assert np.all(fid < 1e-12)

    def test_noise_draws_are_coupled_across_werner_p(self):
        def noisy_rows(p):
            reg = distribute_batch(NoiseModel(werner_p=p), 2000, np.random.default_rng(5))
            fid = np.abs(reg.state.amplitudes @ ideal_pairs().amplitudes.conj()) ** 2
            return fid < 0.5

        assert np.all(noisy_rows(0.95) <= noisy_rows(0.8))

    def test_distribute_pairs_single(self):
        reg = distribute_pairs(IDEAL, np.random.default_rng(0))
        assert reg.size == 1
        assert qsim.fidelity(reg.vector(), ideal_pairs()) == pytest.approx(1.0)


def test_fully_depolarized_xx_average():
    # X, Y, Z on one half of |Phi+> give XX = +1, -1, -1
    reg = distribute_batch(NoiseModel(werner_p=0.0), 10000, np.random.default_rng(8))
    xx = reg.state.expectation({"2A": "X", "2B": "X"})
    assert xx.mean() == pytest.approx(-1 / 3, abs=0.03)


def test_ideal_xx_on_every_pair():
    reg = distribute_batch(IDEAL, 4, np.random.default_rng(0))
    for a, b in DEFAULT_OWNERSHIP.pairs:
        np.testing.assert_allclose(reg.state.expectation({a: "X", b: "X"}), 1.0)
        np.testing.assert_allclose(reg.state.expectation({a: "Z", b: "Z"}), 1.0)


def test_effective_basis_reference_cases():
    assert effective_basis(qsim.PAULI_Z, Server.BOB, IDEAL).angle == 0.0
    n = NoiseModel(bob_angle_offset=math.radians(20))
    assert effective_basis(qsim.PAULI_Z, Server.BOB, n).angle == pytest.approx(0.349, abs=5e-4)
    assert effective_basis(qsim.bloch(math.pi / 4), Server.ALICE, n).angle == pytest.approx(math.pi / 4)
