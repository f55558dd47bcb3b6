"""Shared EPR pairs between the two servers, with a simple noise model."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache

import numpy as np

from . import qsim
from .qsim import MeasurementBasis, StateBatch, StateVector

N_PAIRS = 3


class Server(str, Enum):
    ALICE = "alice"
    BOB = "bob"

    @property
    def other(self) -> "Server":
        return Server.BOB if self is Server.ALICE else Server.ALICE

    @property
    def tag(self) -> str:
        return "A" if self is Server.ALICE else "B"


@dataclass(frozen=True)
class OwnershipMap:
    alice_qubits: tuple = ("1A", "2A", "3A")
    bob_qubits: tuple = ("1B", "2B", "3B")

    def __post_init__(self):
        if len(self.alice_qubits) != N_PAIRS or len(self.bob_qubits) != N_PAIRS:
            raise ValueError(f"each server holds exactly {N_PAIRS} qubits")
        if set(self.alice_qubits) & set(self.bob_qubits):
            raise ValueError("alice and bob qubit sets must be disjoint")
        if len(set(self.alice_qubits)) != N_PAIRS or len(set(self.bob_qubits)) != N_PAIRS:
            raise ValueError("duplicate qubit label")

    @property
    def labels(self) -> tuple:
        return self.alice_qubits + self.bob_qubits

    @property
    def pairs(self) -> tuple:
        return tuple(zip(self.alice_qubits, self.bob_qubits))

    def qubits_of(self, server: Server) -> tuple:
        return self.alice_qubits if server is Server.ALICE else self.bob_qubits

    def label(self, server: Server, index: int) -> str:
        """Label of the server's ``index``-th qubit (1-based)."""
        qubits = self.qubits_of(server)
        if not 1 <= index <= len(qubits):
            raise IndexError(f"{server.value} has no qubit {index}")
        return qubits[index - 1]

    def owner(self, label) -> Server | None:
        if label in self.alice_qubits:
            return Server.ALICE
        if label in self.bob_qubits:
            return Server.BOB
        return None


DEFAULT_OWNERSHIP = OwnershipMap()


def hwp_to_bloch(degrees: float) -> float:
    """Bloch-sphere angle (radians) produced by misaligning a half-wave plate.

    A HWP turned by d rotates linear polarisation by 2d, which is a 4d rotation
    on the Bloch sphere.
    """
    return math.radians(4.0 * degrees)


def _wrap(angle: float) -> float:
    # into (-pi, pi]
    wrapped = math.remainder(angle, 2 * math.pi)
    return math.pi if wrapped == -math.pi else wrapped


@dataclass(frozen=True)
class NoiseModel:
    """Per-pair survival probability plus fixed measurement-angle offsets.

    With probability ``1 - werner_p`` a pair gets a uniformly random X, Y or Z
    on Bob's half. Offsets (radians on the Bloch sphere) are added to every
    measurement the corresponding server makes.
    """

    werner_p: float = 1.0
    alice_angle_offset: float = 0.0
    bob_angle_offset: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.werner_p <= 1.0:
            raise ValueError(f"werner_p must lie in [0, 1], got {self.werner_p}")
        for name in ("alice_angle_offset", "bob_angle_offset"):
            value = getattr(self, name)
            if not -math.pi < value <= math.pi:
                raise ValueError(f"{name} must lie in (-pi, pi], got {value}")

    def offset(self, server: Server) -> float:
        return self.alice_angle_offset if server is Server.ALICE else self.bob_angle_offset

    @property
    def is_ideal(self) -> bool:
        return self.werner_p == 1.0 and self.alice_angle_offset == 0.0 and self.bob_angle_offset == 0.0


IDEAL = NoiseModel()


@dataclass
class JointRegister:
    """Referee-held state of all six qubits. Servers never see this object."""

    state: StateBatch
    ownership: OwnershipMap = field(default=DEFAULT_OWNERSHIP)

    @property
    def size(self) -> int:
        return self.state.size

    def vector(self, row: int = 0) -> StateVector:
        return StateVector.from_batch(self.state, row)


@lru_cache(maxsize=None)
def ideal_pairs(ownership: OwnershipMap = DEFAULT_OWNERSHIP) -> StateVector:
    """|Phi+> on every (iA, iB) pair."""
    state = qsim.new_register(ownership.labels)
    for a, b in ownership.pairs:
        state = qsim.apply_gate(state, qsim.H(a))
        state = qsim.apply_gate(state, qsim.CNOT(a, b))
    return state


_PAULIS = ("X", "Y", "Z")


def distribute_batch(
    noise: NoiseModel,
    size: int,
    rng: np.random.Generator,
    ownership: OwnershipMap = DEFAULT_OWNERSHIP,
) -> JointRegister:
    """``size`` independent copies of three (possibly noisy) shared pairs."""
    state = StateBatch.repeat(ideal_pairs(ownership), size)
    # fixed draw count regardless of werner_p, so sweeps share random numbers
    survive = rng.random((size, N_PAIRS))
    which = rng.integers(0, 3, size=(size, N_PAIRS))
    if noise.werner_p < 1.0:
        for pair, (_, bob_label) in enumerate(ownership.pairs):
            noisy = survive[:, pair] >= noise.werner_p
            for k, name in enumerate(_PAULIS):
                mask = noisy & (which[:, pair] == k)
                if mask.any():
                    state.apply(qsim.Gate(name, (bob_label,)), mask=mask)
    return JointRegister(state, ownership)


def distribute_pairs(noise: NoiseModel, rng: np.random.Generator) -> JointRegister:
    return distribute_batch(noise, 1, rng)


def effective_basis(basis: MeasurementBasis, server: Server, noise: NoiseModel) -> MeasurementBasis:
    return qsim.bloch(basis.angle + noise.offset(server))
