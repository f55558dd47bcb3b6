"""Dense state-vector simulation for the handful of qubits the protocol uses.

Two front ends share one set of kernels:

* :class:`StateVector` plus the module functions (``new_register``,
  ``apply_gate``, ``measure``, ``project_parity``, ``expectation``) give an
  immutable single-state API.
* :class:`StateBatch` holds many independent states of the same register and
  updates them in place. The referee uses it to push thousands of rounds
  through numpy at once.

Amplitude ordering is little-endian in the label list: label ``i`` is bit
``i`` of the basis index.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

MAX_QUBITS = 12
NORM_TOL = 1e-9
PROB_FLOOR = 1e-14  # below this a branch is treated as impossible (rounding residue)

Outcome = int  # +1 or -1


class RegisterError(ValueError):
    """Bad label, duplicate label, or an otherwise malformed register request."""


# ---------------------------------------------------------------------------
# Measurement bases and gates
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MeasurementBasis:
    """Observable cos(theta) Z + sin(theta) X.

    ``kind`` is "Z", "X" or "angle". Z and X are kept as distinct kinds so
    commands print the way an operator would write them, but they measure the
    same thing as ``angle`` at 0 and pi/2.
    """

    kind: str
    theta: float = 0.0

    def __post_init__(self):
        if self.kind not in ("Z", "X", "angle"):
            raise ValueError(f"unknown basis kind {self.kind!r}")

    @property
    def angle(self) -> float:
        if self.kind == "Z":
            return 0.0
        if self.kind == "X":
            return math.pi / 2
        return self.theta

    def as_angle(self) -> "MeasurementBasis":
        return MeasurementBasis("angle", self.angle)

    def __str__(self) -> str:
        if self.kind != "angle":
            return self.kind
        return f"R{self.theta:+.6f}"

    @classmethod
    def parse(cls, text: str) -> "MeasurementBasis":
        if text in ("Z", "X"):
            return cls(text)
        if text.startswith("R"):
            return cls("angle", float(text[1:]))
        raise ValueError(f"cannot parse basis {text!r}")


PAULI_Z = MeasurementBasis("Z")
PAULI_X = MeasurementBasis("X")


def bloch(theta: float) -> MeasurementBasis:
    return MeasurementBasis("angle", float(theta))


@dataclass(frozen=True)
class Gate:
    name: str
    qubits: tuple

    def __post_init__(self):
        arity = 2 if self.name == "CNOT" else 1
        if self.name not in _ONE_QUBIT and self.name != "CNOT":
            raise ValueError(f"unsupported gate {self.name!r}")
        if len(self.qubits) != arity:
            raise ValueError(f"{self.name} acts on {arity} qubit(s)")
        if arity == 2 and self.qubits[0] == self.qubits[1]:
            raise RegisterError("CNOT control and target must differ")

    def __str__(self) -> str:
        return f"{self.name}({','.join(str(q) for q in self.qubits)})"


def H(q) -> Gate:
    return Gate("H", (q,))


def X(q) -> Gate:
    return Gate("X", (q,))


def Y(q) -> Gate:
    return Gate("Y", (q,))


def Z(q) -> Gate:
    return Gate("Z", (q,))


def CNOT(control, target) -> Gate:
    return Gate("CNOT", (control, target))


_S2 = 1 / math.sqrt(2)
_ONE_QUBIT = {
    "I": np.eye(2, dtype=complex),
    "H": np.array([[_S2, _S2], [_S2, -_S2]], dtype=complex),
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
}


def _basis_rotation(theta: float) -> np.ndarray:
    # maps the +1 eigenvector of cos(t)Z + sin(t)X onto |0>, the -1 one onto |1>
    c, s = math.cos(theta / 2), math.sin(theta / 2)
    return np.array([[c, s], [-s, c]], dtype=complex)


# ---------------------------------------------------------------------------
# Kernels over tensors of shape (batch, 2, 2, ..., 2)
# ---------------------------------------------------------------------------


def _apply_1q(t: np.ndarray, axis: int, u: np.ndarray) -> np.ndarray:
    out = np.tensordot(t, u, axes=([axis], [1]))
    return np.moveaxis(out, -1, axis)


def _slice(ndim: int, fixed: dict) -> tuple:
    idx = [slice(None)] * ndim
    for axis, value in fixed.items():
        idx[axis] = value
    return tuple(idx)


def _apply_cnot(t: np.ndarray, c: int, tg: int) -> np.ndarray:
    out = t.copy()
    nd = t.ndim
    hi0 = _slice(nd, {c: 1, tg: 0})
    hi1 = _slice(nd, {c: 1, tg: 1})
    out[hi0], out[hi1] = t[hi1], t[hi0]
    return out


def _prob_zero(t: np.ndarray, axis: int) -> np.ndarray:
    sel = np.take(t, 0, axis=axis)
    return np.sum(np.abs(sel.reshape(sel.shape[0], -1)) ** 2, axis=1)


def _norms(t: np.ndarray) -> np.ndarray:
    return np.sqrt(np.sum(np.abs(t.reshape(t.shape[0], -1)) ** 2, axis=1))


def _bcast(v: np.ndarray, ndim: int) -> np.ndarray:
    return v.reshape((-1,) + (1,) * (ndim - 1))


# ---------------------------------------------------------------------------
# Batched state
# ---------------------------------------------------------------------------


def _check_labels(labels: Sequence) -> tuple:
    labels = tuple(labels)
    if not labels:
        raise RegisterError("register needs at least one qubit")
    if len(set(labels)) != len(labels):
        raise RegisterError(f"duplicate qubit labels in {labels}")
    if len(labels) > MAX_QUBITS:
        raise RegisterError(f"at most {MAX_QUBITS} qubits supported")
    return labels


class StateBatch:
    """``size`` independent pure states over the same labelled register.

    Operations mutate the batch in place. Measurement outcomes come back as
    int8 arrays of +1/-1, one entry per state.
    """

    def __init__(self, labels: Sequence, amplitudes: np.ndarray):
        self.labels = _check_labels(labels)
        self._index = {lab: i for i, lab in enumerate(self.labels)}
        k = len(self.labels)
        amps = np.asarray(amplitudes, dtype=complex)
        if amps.ndim == 1:
            amps = amps[None, :]
        if amps.shape[1] != 2**k:
            raise RegisterError(f"expected {2**k} amplitudes, got {amps.shape[1]}")
        # C-order reshape puts the most significant bit first, i.e. the last label
        self.tensor = amps.reshape((amps.shape[0],) + (2,) * k).copy()

    @classmethod
    def zeros(cls, labels: Sequence, size: int) -> "StateBatch":
        labels = _check_labels(labels)
        amps = np.zeros((size, 2 ** len(labels)), dtype=complex)
        amps[:, 0] = 1.0
        return cls(labels, amps)

    @classmethod
    def repeat(cls, state: "StateVector", size: int) -> "StateBatch":
        return cls(state.qubit_labels, np.tile(state.amplitudes, (size, 1)))

    @property
    def size(self) -> int:
        return self.tensor.shape[0]

    @property
    def amplitudes(self) -> np.ndarray:
        return self.tensor.reshape(self.size, -1)

    def axis(self, label) -> int:
        try:
            i = self._index[label]
        except KeyError:
            raise RegisterError(f"unknown qubit label {label!r}") from None
        return len(self.labels) - i

    def rows(self, mask) -> "StateBatch":
        sub = object.__new__(StateBatch)
        sub.labels, sub._index = self.labels, self._index
        sub.tensor = self.tensor[mask].copy()
        return sub

    def assign(self, mask, other: "StateBatch") -> None:
        self.tensor[mask] = other.tensor

    def norms(self) -> np.ndarray:
        return _norms(self.tensor)

    # -- unitaries --------------------------------------------------------

    def apply(self, gate: Gate, mask=None) -> None:
        axes = [self.axis(q) for q in gate.qubits]
        t = self.tensor if mask is None else self.tensor[mask]
        if gate.name == "CNOT":
            t = _apply_cnot(t, axes[0], axes[1])
        else:
            t = _apply_1q(t, axes[0], _ONE_QUBIT[gate.name])
        if mask is None:
            self.tensor = t
        else:
            self.tensor[mask] = t

    def apply_matrix(self, label, u: np.ndarray) -> None:
        self.tensor = _apply_1q(self.tensor, self.axis(label), np.asarray(u, dtype=complex))

    # -- measurement ------------------------------------------------------

    def measure(self, label, basis: MeasurementBasis, uniforms=None, forced=None):
        """Projective measurement of ``basis`` on ``label`` for every state.

        Pass ``uniforms`` (one U[0,1) draw per state) to sample with the Born
        rule, or ``forced`` (+1/-1 per state) to project onto a chosen outcome.
        Returns ``(outcomes, probabilities)`` where ``probabilities`` is the
        Born probability of the returned outcome. A forced outcome of
        probability zero leaves that state as the zero vector.
        """
        ax = self.axis(label)
        theta = basis.angle
        rotated = theta != 0.0
        t = self.tensor
        if rotated:
            r = _basis_rotation(theta)
            t = _apply_1q(t, ax, r)
        p0 = np.clip(_prob_zero(t, ax), 0.0, 1.0)
        if forced is not None:
            outcomes = np.asarray(forced, dtype=np.int8)
            if outcomes.shape != (self.size,):
                outcomes = np.full(self.size, outcomes, dtype=np.int8)
        else:
            if uniforms is None:
                raise ValueError("measure needs uniforms or forced outcomes")
            outcomes = np.where(np.asarray(uniforms) < p0, 1, -1).astype(np.int8)
        keep_zero = outcomes == 1
        prob = np.where(keep_zero, p0, 1.0 - p0)
        prob = np.where(prob < PROB_FLOOR, 0.0, prob)
        t = t.copy() if not rotated else t
        zero_idx = _slice(t.ndim, {ax: 0})
        one_idx = _slice(t.ndim, {ax: 1})
        t[zero_idx] *= _bcast(keep_zero, t.ndim - 1)
        t[one_idx] *= _bcast(~keep_zero, t.ndim - 1)
        scale = np.where(prob > 0, 1.0 / np.sqrt(np.where(prob > 0, prob, 1.0)), 0.0)
        t *= _bcast(scale, t.ndim)
        if rotated:
            t = _apply_1q(t, ax, r.T.conj())
        self.tensor = t
        return outcomes, prob

    def parity_project(self, q1, q2, uniforms=None, forced=None):
        """Post-select the even-parity subspace span{|00>, |11>} of (q1, q2).

        Returns ``(success, probability)`` arrays. Successful states are
        renormalised projections; failed states are renormalised onto the odd
        subspace and should be thrown away by the caller.
        """
        if q1 == q2:
            raise RegisterError("parity projection needs two distinct qubits")
        a1, a2 = self.axis(q1), self.axis(q2)
        t = self.tensor.copy()
        nd = t.ndim
        even = np.zeros((2, 2), dtype=bool)
        even[0, 0] = even[1, 1] = True
        # mask over the two axes, broadcast across the rest
        shape = [1] * nd
        shape[a1] = shape[a2] = 2
        even_mask = (even if a1 < a2 else even.T).reshape(shape)
        p_even = np.clip(np.sum(np.abs(np.where(even_mask, t, 0)).reshape(t.shape[0], -1) ** 2, axis=1), 0, 1)
        if forced is not None:
            success = np.broadcast_to(np.asarray(forced, dtype=bool), (self.size,)).copy()
        else:
            if uniforms is None:
                raise ValueError("parity_project needs uniforms or forced outcomes")
            success = np.asarray(uniforms) < p_even
        keep = np.where(_bcast(success, nd), even_mask, ~even_mask)
        t = np.where(keep, t, 0)
        prob = np.where(success, p_even, 1.0 - p_even)
        prob = np.where(prob < PROB_FLOOR, 0.0, prob)
        scale = np.where(prob > 0, 1.0 / np.sqrt(np.where(prob > 0, prob, 1.0)), 0.0)
        self.tensor = t * _bcast(scale, nd)
        return success, prob

    # -- observables ------------------------------------------------------

    def expectation(self, pauli_string: Mapping) -> np.ndarray:
        t = self.tensor
        for label, p in pauli_string.items():
            if p not in _ONE_QUBIT or p == "H":
                raise ValueError(f"unknown Pauli {p!r}")
            if p != "I":
                t = _apply_1q(t, self.axis(label), _ONE_QUBIT[p])
        flat_a = self.tensor.reshape(self.size, -1)
        flat_b = t.reshape(self.size, -1)
        val = np.sum(flat_a.conj() * flat_b, axis=1)
        if np.any(np.abs(val.imag) > 1e-9):
            raise ArithmeticError("Pauli expectation has an imaginary part")
        return val.real

    def expectation_bloch(self, angles: Mapping) -> np.ndarray:
        """Expectation of a product of X-Z plane observables, one per label."""
        total = np.zeros(self.size)
        items = list(angles.items())
        for choice in range(2 ** len(items)):
            coeff = 1.0
            paulis = {}
            for j, (label, theta) in enumerate(items):
                if (choice >> j) & 1:
                    coeff *= math.sin(theta)
                    paulis[label] = "X"
                else:
                    coeff *= math.cos(theta)
                    paulis[label] = "Z"
            if coeff != 0.0:
                total = total + coeff * self.expectation(paulis)
        return total


# ---------------------------------------------------------------------------
# Single-state API
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StateVector:
    amplitudes: np.ndarray
    qubit_labels: tuple = field(default=())

    def __post_init__(self):
        labels = _check_labels(self.qubit_labels)
        amps = np.asarray(self.amplitudes, dtype=complex).reshape(-1)
        if amps.shape[0] != 2 ** len(labels):
            raise RegisterError(f"expected {2 ** len(labels)} amplitudes, got {amps.shape[0]}")
        amps.setflags(write=False)
        object.__setattr__(self, "qubit_labels", labels)
        object.__setattr__(self, "amplitudes", amps)

    @property
    def num_qubits(self) -> int:
        return len(self.qubit_labels)

    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def amplitude(self, bits: Mapping) -> complex:
        """Amplitude of the basis state given as ``{label: 0|1}``."""
        idx = 0
        for i, lab in enumerate(self.qubit_labels):
            idx |= int(bits.get(lab, 0)) << i
        return complex(self.amplitudes[idx])

    def batch(self, size: int = 1) -> StateBatch:
        return StateBatch.repeat(self, size)

    @classmethod
    def from_batch(cls, batch: StateBatch, row: int = 0) -> "StateVector":
        return cls(batch.amplitudes[row].copy(), batch.labels)


def new_register(labels: Iterable) -> StateVector:
    labels = _check_labels(list(labels))
    amps = np.zeros(2 ** len(labels), dtype=complex)
    amps[0] = 1.0
    return StateVector(amps, labels)


def basis_state(labels: Iterable, bits: Mapping) -> StateVector:
    state = new_register(labels)
    amps = np.zeros_like(state.amplitudes)
    idx = sum(int(bits.get(lab, 0)) << i for i, lab in enumerate(state.qubit_labels))
    amps[idx] = 1.0
    return StateVector(amps, state.qubit_labels)


def tensor(a: StateVector, b: StateVector) -> StateVector:
    """Register with ``a``'s labels first, then ``b``'s."""
    # b's labels are the high bits
    amps = np.kron(b.amplitudes, a.amplitudes)
    return StateVector(amps, a.qubit_labels + b.qubit_labels)


def apply_gate(state: StateVector, gate: Gate) -> StateVector:
    b = state.batch()
    b.apply(gate)
    return StateVector.from_batch(b)


def measure(state: StateVector, qubit, basis: MeasurementBasis, rng: np.random.Generator):
    b = state.batch()
    outcomes, _ = b.measure(qubit, basis, uniforms=rng.random(1))
    return int(outcomes[0]), StateVector.from_batch(b)


def project(state: StateVector, qubit, basis: MeasurementBasis, outcome: Outcome):
    """Project onto a chosen outcome. Returns ``(probability, post_state)``.

    The post state is ``None`` when the outcome has probability zero.
    """
    b = state.batch()
    _, prob = b.measure(qubit, basis, forced=np.array([outcome]))
    p = float(prob[0])
    return p, (StateVector.from_batch(b) if p > 0 else None)


def project_parity(state: StateVector, q1, q2, rng: np.random.Generator):
    b = state.batch()
    success, _ = b.parity_project(q1, q2, uniforms=rng.random(1))
    return bool(success[0]), StateVector.from_batch(b)


def expectation(state: StateVector, pauli_string: Mapping) -> float:
    return float(state.batch().expectation(pauli_string)[0])


def expectation_bloch(state: StateVector, angles: Mapping) -> float:
    return float(state.batch().expectation_bloch(angles)[0])


def fidelity(a: StateVector, b: StateVector) -> float:
    if a.qubit_labels != b.qubit_labels:
        raise RegisterError("fidelity needs identically labelled registers")
    return float(abs(np.vdot(a.amplitudes, b.amplitudes)) ** 2)


def reduced_pure_state(state: StateVector, keep: Sequence) -> StateVector:
    """Pure state of ``keep`` when the rest of the register is a product factor.

    Raises if the kept qubits are entangled with the remainder.
    """
    keep = list(keep)
    others = [lab for lab in state.qubit_labels if lab not in keep]
    b = state.batch()
    order = [b.axis(lab) for lab in reversed(keep)] + [b.axis(lab) for lab in reversed(others)]
    mat = np.transpose(b.tensor[0], [a - 1 for a in order]).reshape(2 ** len(keep), -1)
    u, s, _ = np.linalg.svd(mat)
    if len(s) > 1 and s[1] > 1e-7:
        raise ValueError("kept qubits are entangled with the rest of the register")
    vec = u[:, 0] * s[0]
    # vec is indexed with keep[-1] as the most significant bit, matching little-endian
    phase = vec[np.argmax(np.abs(vec))]
    vec = vec * (abs(phase) / phase)
    return StateVector(vec / np.linalg.norm(vec), tuple(keep))
