"""Client-side checks: CHSH threshold, stabilizer syndromes, CNOT fidelity bounds."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import qsim
from .parties import (
    ALPHABET,
    RoundPlan,
    RoundTable,
    RoundTranscript,
    Server,
    SubProtocol,
    TestSetting,
    enumerate_round,
    test_command,
)

OMEGA_STAR = math.cos(math.pi / 8) ** 2


def chsh_threshold(n: int) -> float:
    """epsilon(n) = sqrt(ln n / n) / (2 sqrt 2)."""
    if int(n) != n or n < 2:
        raise ValueError(f"chsh_threshold needs an integer n >= 2, got {n}")
    return math.sqrt(math.log(n) / n) / (2 * math.sqrt(2))


def binomial_stderr(p: float, n: int) -> float:
    return math.sqrt(p * (1.0 - p) / n) if n > 0 else float("nan")


class Decision(str, Enum):
    ACCEPT = "accept"
    REJECT = "reject"


class Cause(str, Enum):
    CLEAN = "clean"
    CHSH_BELOW_THRESHOLD = "chsh-below-threshold"
    STABILIZER_MISMATCH = "stabilizer-mismatch"


@dataclass(frozen=True)
class Verdict:
    decision: Decision
    cause: Cause = Cause.CLEAN
    round_index: int | None = None

    @property
    def accepted(self) -> bool:
        return self.decision is Decision.ACCEPT

    def to_dict(self) -> dict:
        return {"decision": self.decision.value, "cause": self.cause.value, "round_index": self.round_index}


ACCEPT = Verdict(Decision.ACCEPT)


@dataclass(frozen=True)
class ChshTally:
    n: int
    wins: int

    def __post_init__(self):
        if self.n < 0 or not 0 <= self.wins <= self.n:
            raise ValueError(f"inconsistent tally: {self.wins} wins out of {self.n}")

    omega_star = OMEGA_STAR

    @property
    def epsilon(self) -> float:
        return chsh_threshold(self.n)

    @property
    def win_rate(self) -> float:
        return self.wins / self.n if self.n else float("nan")

    @property
    def stderr(self) -> float:
        return binomial_stderr(self.win_rate, self.n)

    @property
    def estimated_epsilon(self) -> float:
        """omega* minus the observed win rate."""
        return OMEGA_STAR - self.win_rate

    @property
    def required_wins(self) -> int:
        return math.ceil((OMEGA_STAR - self.epsilon) * self.n)

    def __add__(self, other: "ChshTally") -> "ChshTally":
        return ChshTally(self.n + other.n, self.wins + other.wins)


def chsh_verdict(tally: ChshTally) -> Verdict:
    if tally.n < 2:
        raise ValueError("need at least two CHSH rounds for a verdict")
    if tally.wins < tally.required_wins:
        return Verdict(Decision.REJECT, Cause.CHSH_BELOW_THRESHOLD)
    return ACCEPT


# ---------------------------------------------------------------------------
# Stabilizer syndromes
# ---------------------------------------------------------------------------

TOMOGRAPHY_BASES = {
    SubProtocol.STATE_TOMO: ("X1X2Z3", "Z1Z2Z3"),
    SubProtocol.PROCESS_TOMO: ("Z1X2X3", "Z1Z2Z3"),
}

# Groups of the tested server's qubits whose outcome product is a stabilizer.
_TESTED_GROUPS = {
    SubProtocol.STATE_TOMO: ((1, 2), (3,)),
    SubProtocol.PROCESS_TOMO: ((1,), (2, 3)),
}

# For each tomography basis: (tested-server qubits, steering-server qubits) such
# that the two outcome products agree in an honest ideal round. Regenerated
# from the simulator by derive_sign_table() in the test suite.
SIGN_TABLE = {
    (SubProtocol.STATE_TOMO, "X1X2Z3"): (((1, 2), (1, 2)), ((3,), (3,))),
    (SubProtocol.STATE_TOMO, "Z1Z2Z3"): (((1, 2), ()), ((3,), (3,))),
    (SubProtocol.PROCESS_TOMO, "Z1X2X3"): (((1,), (1,)), ((2, 3), (2,))),
    (SubProtocol.PROCESS_TOMO, "Z1Z2Z3"): (((1,), (1,)), ((2, 3), (3,))),
}


def tested_server(sub: SubProtocol) -> Server:
    return Server.BOB if sub is SubProtocol.STATE_TOMO else Server.ALICE


def _check_basis(sub: SubProtocol, basis_string: str) -> None:
    sub = SubProtocol(sub)
    if sub not in TOMOGRAPHY_BASES:
        raise ValueError(f"{sub.value} is not a tomography sub-protocol")
    if basis_string not in TOMOGRAPHY_BASES[sub]:
        raise ValueError(f"{basis_string} is not a {sub.value} basis")


@dataclass(frozen=True)
class SyndromeExpectation:
    """Predicted outcome products for the tested server in one round.

    ``checks`` pairs a tuple of the tested server's qubits with the +1/-1
    value its outcome product must take.
    """

    sub_protocol: SubProtocol
    basis_string: str
    checks: tuple

    def holds(self, reported) -> bool:
        return all(int(np.prod([reported[q - 1] for q in qubits])) == sign for qubits, sign in self.checks)


def _product(outcomes: np.ndarray, qubits: tuple) -> np.ndarray:
    outcomes = np.atleast_2d(outcomes)
    if not qubits:
        return np.ones(outcomes.shape[0], dtype=np.int64)
    return np.prod(outcomes[:, [q - 1 for q in qubits]].astype(np.int64), axis=1)


def expected_syndromes(sub: SubProtocol, basis_string: str, steering) -> SyndromeExpectation:
    """What the tested server must report, given the steering server's outcomes."""
    _check_basis(sub, basis_string)
    sub = SubProtocol(sub)
    steering = np.asarray(steering).reshape(1, 3)
    checks = tuple(
        (tested, int(_product(steering, steer)[0])) for tested, steer in SIGN_TABLE[(sub, basis_string)]
    )
    return SyndromeExpectation(sub, basis_string, checks)


def syndrome_pass(sub: SubProtocol, basis_string: str, steering: np.ndarray, tested: np.ndarray) -> np.ndarray:
    """Vectorised check of every row: True where all predicted products match."""
    _check_basis(sub, basis_string)
    ok = np.ones(np.atleast_2d(tested).shape[0], dtype=bool)
    for tested_q, steer_q in SIGN_TABLE[(SubProtocol(sub), basis_string)]:
        ok &= _product(tested, tested_q) == _product(steering, steer_q)
    return ok


def _tomo_parts(transcript: RoundTranscript):
    sub = transcript.sub_protocol
    basis = transcript.plan.tomography_basis
    if sub not in TOMOGRAPHY_BASES or basis is None:
        raise ValueError(f"round {transcript.round_index} is not a scored tomography round")
    if not transcript.parity_success:
        raise ValueError(f"round {transcript.round_index} failed post-selection")
    tested = tested_server(sub)
    try:
        t_out = transcript.outcomes[tested.value]
        s_out = transcript.outcomes[tested.other.value]
    except KeyError as exc:
        raise ValueError(f"transcript lacks outcomes for {exc}") from None
    if len(t_out) != 3 or len(s_out) != 3 or any(v not in (1, -1) for v in list(t_out) + list(s_out)):
        raise ValueError(f"round {transcript.round_index}: malformed outcomes")
    return sub, basis, s_out, t_out


def check_round(transcript: RoundTranscript, expectation: SyndromeExpectation | None = None) -> bool:
    sub, basis, steering, tested = _tomo_parts(transcript)
    if expectation is None:
        expectation = expected_syndromes(sub, basis, steering)
    return expectation.holds(tested)


def derive_sign_table() -> dict:
    """Rebuild SIGN_TABLE by enumerating honest ideal rounds in the simulator.

    For each tomography basis and each stabilizer group of the tested server,
    finds the unique subset of steering qubits whose outcome product equals the
    group's product in every branch with nonzero probability.
    """
    table = {}
    subsets = [s for r in range(4) for s in itertools.combinations((1, 2, 3), r)]
    for sub, bases in TOMOGRAPHY_BASES.items():
        tested = tested_server(sub)
        for basis in bases:
            cmd = next(c for c in ALPHABET[tested] if c.basis_string == basis)
            setting = TestSetting(False, 1 if "X2" in basis else 0)
            assert test_command(tested, setting) == cmd
            plan = RoundPlan(
                sub,
                None,
                None if tested is Server.BOB else setting,
                setting if tested is Server.BOB else None,
            )
            rounds = enumerate_round(plan)
            t_out = rounds.bob_out if tested is Server.BOB else rounds.alice_out
            s_out = rounds.alice_out if tested is Server.BOB else rounds.bob_out
            entry = []
            for group in _TESTED_GROUPS[sub]:
                target = _product(t_out, group)
                matches = [s for s in subsets if np.array_equal(_product(s_out, s), target)]
                if len(matches) != 1:
                    raise AssertionError(f"{sub.value} {basis} {group}: no unique predictor ({matches})")
                entry.append((group, matches[0]))
            table[(sub, basis)] = tuple(entry)
    return table


# ---------------------------------------------------------------------------
# CNOT fidelity
# ---------------------------------------------------------------------------


def hofmann_bounds(f_zz: float, f_xx: float) -> tuple:
    """Process-fidelity interval from truth-table fidelities in two complementary bases."""
    for f in (f_zz, f_xx):
        if not 0.0 <= f <= 1.0:
            raise ValueError(f"truth-table fidelity must lie in [0, 1], got {f}")
    return max(0.0, f_zz + f_xx - 1.0), min(f_zz, f_xx)


# ideal CNOT truth tables as input index -> output index over (control, target) bits,
# index = 2*control + target. In the X basis the roles swap: |x_c, x_t> -> |x_c ^ x_t, x_t>.
CNOT_TRUTH_Z = (0, 1, 3, 2)
CNOT_TRUTH_X = (0, 3, 2, 1)


def truth_table_fidelity(counts, ideal_table) -> float:
    counts = np.asarray(counts, dtype=float)
    if counts.shape != (4, 4):
        raise ValueError("counts must be a 4x4 histogram")
    if np.any(counts < 0):
        raise ValueError("counts must be nonnegative")
    totals = counts.sum(axis=1)
    if np.any(totals <= 0):
        raise ValueError("every input row needs at least one count")
    hits = counts[np.arange(4), list(ideal_table)]
    return float(np.mean(hits / totals))


PAULI_LABELS = tuple(a + b for a in "IXYZ" for b in "IXYZ")


def _pauli_probs(pauli_probs) -> np.ndarray:
    p = np.asarray(pauli_probs, dtype=float)
    if p.shape != (16,) or np.any(p < 0) or not math.isclose(p.sum(), 1.0, abs_tol=1e-9):
        raise ValueError("need a probability vector over the 16 two-qubit Paulis")
    return p


def depolarizing_pauli_probs(rate: float) -> np.ndarray:
    """Independent single-qubit depolarizing noise on control and target."""
    single = np.array([1 - rate, rate / 3, rate / 3, rate / 3])
    return np.outer(single, single).reshape(-1)


def _noisy_cnot(state: qsim.StateVector, pauli: str) -> qsim.StateVector:
    state = qsim.apply_gate(state, qsim.CNOT("c", "t"))
    for label, p in zip(("c", "t"), pauli):
        if p != "I":
            state = qsim.apply_gate(state, qsim.Gate(p, (label,)))
    return state


def noisy_cnot_counts(pauli_probs, basis: str) -> np.ndarray:
    """Exact 4x4 output distribution of CNOT followed by a Pauli channel.

    ``basis`` is "Z" or "X": inputs are prepared and outputs read in that basis.
    Row/column index is 2*control + target.
    """
    p = _pauli_probs(pauli_probs)
    rows = np.zeros((4, 4))
    for inp in range(4):
        c_in, t_in = inp >> 1, inp & 1
        prep = qsim.basis_state(("c", "t"), {"c": c_in, "t": t_in})
        if basis == "X":
            prep = qsim.apply_gate(qsim.apply_gate(prep, qsim.H("c")), qsim.H("t"))
        for weight, pauli in zip(p, PAULI_LABELS):
            if weight == 0:
                continue
            out = _noisy_cnot(prep, pauli)
            if basis == "X":
                out = qsim.apply_gate(qsim.apply_gate(out, qsim.H("c")), qsim.H("t"))
            for o in range(4):
                amp = out.amplitude({"c": o >> 1, "t": o & 1})
                rows[inp, o] += weight * abs(amp) ** 2
    return rows


def cnot_process_fidelity(pauli_probs) -> float:
    """Process fidelity of CNOT-then-Pauli-channel against the ideal CNOT.

    Brute force: push the maximally entangled state of reference and system
    qubits through every Kraus branch and sum the weighted overlaps with the
    ideal output.
    """
    p = _pauli_probs(pauli_probs)
    labels = ("rc", "rt", "c", "t")
    choi = qsim.new_register(labels)
    for r, s in (("rc", "c"), ("rt", "t")):
        choi = qsim.apply_gate(choi, qsim.H(r))
        choi = qsim.apply_gate(choi, qsim.CNOT(r, s))
    ideal = qsim.apply_gate(choi, qsim.CNOT("c", "t"))
    total = 0.0
    for weight, pauli in zip(p, PAULI_LABELS):
        if weight:
            total += weight * qsim.fidelity(ideal, _noisy_cnot(choi, pauli))
    return total
