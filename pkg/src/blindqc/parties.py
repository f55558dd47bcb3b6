"""Client (Charlie), the two servers, and the referee that runs them.

The client only ever sends :class:`Command` objects. Each server turns a
command into operations on its own three qubits through a :class:`Handle`
issued by the referee, which owns the physical register, enforces ownership,
and keeps an audit log.

Rounds are executed in batches: every round that shares the same pair of
commands is pushed through one :class:`~blindqc.qsim.StateBatch`. A single
round is just a batch of one.
"""
from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Sequence

import numpy as np

from . import qsim
from .qsim import PAULI_X, PAULI_Z, Gate, MeasurementBasis
from .resources import (
    DEFAULT_OWNERSHIP,
    IDEAL,
    JointRegister,
    NoiseModel,
    OwnershipMap,
    Server,
    distribute_batch,
    effective_basis,
)

# ---------------------------------------------------------------------------
# Sub-protocols and plans
# ---------------------------------------------------------------------------


class SubProtocol(str, Enum):
    COMPUTATION = "computation"
    CHSH = "chsh"
    STATE_TOMO = "state-tomo"
    PROCESS_TOMO = "process-tomo"

    @property
    def code(self) -> int:
        return _SUB_CODES[self]

    @classmethod
    def from_code(cls, code: int) -> "SubProtocol":
        return SUBPROTOCOLS[int(code)]

    def computes(self, server: Server) -> bool:
        """Whether ``server`` receives its Computation command in this sub-protocol."""
        if server is Server.ALICE:
            return self in (SubProtocol.COMPUTATION, SubProtocol.STATE_TOMO)
        return self in (SubProtocol.COMPUTATION, SubProtocol.PROCESS_TOMO)


SUBPROTOCOLS = tuple(SubProtocol)
_SUB_CODES = {s: i for i, s in enumerate(SUBPROTOCOLS)}


class Orientation(str, Enum):
    ALICE_ROTATED = "alice-rotated"
    BOB_ROTATED = "bob-rotated"


ORIENTATIONS = tuple(Orientation)


def _check_eta(eta: float) -> None:
    if not 0.0 < eta < 1.0:
        raise ValueError(f"eta must lie strictly between 0 and 1, got {eta}")


def sample_subprotocols(eta: float, size: int, rng: np.random.Generator) -> np.ndarray:
    """Codes into SUBPROTOCOLS with weights (eta, (1-eta)/3, (1-eta)/3, (1-eta)/3)."""
    _check_eta(eta)
    u = rng.random(size)
    tests = 1 + np.floor((u - eta) / ((1.0 - eta) / 3.0)).astype(np.int64)
    return np.where(u < eta, 0, np.clip(tests, 1, 3)).astype(np.int8)


def sample_subprotocol(eta: float, rng: np.random.Generator) -> SubProtocol:
    return SubProtocol.from_code(sample_subprotocols(eta, 1, rng)[0])


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Command:
    """Instructions for one server, in terms of its local qubits 1..3.

    Steps run in order: optional parity post-selection, gates, then one
    measurement per qubit.
    """

    measurements: tuple
    gates: tuple = ()
    parity: tuple | None = None

    def __post_init__(self):
        if len(self.measurements) != 3:
            raise ValueError("a command measures exactly three qubits")

    def __str__(self) -> str:
        parts = []
        if self.parity:
            parts.append(f"PARITY({self.parity[0]},{self.parity[1]})")
        parts.extend(str(g) for g in self.gates)
        meas = " ".join(_fmt_meas(b, i) for i, b in enumerate(self.measurements, 1))
        return "; ".join(parts + [meas])

    @classmethod
    def parse(cls, text: str) -> "Command":
        *steps, meas = [s.strip() for s in text.split(";")]
        parity, gates = None, []
        for step in steps:
            m = re.fullmatch(r"(\w+)\((\d+)(?:,(\d+))?\)", step)
            if not m:
                raise ValueError(f"cannot parse command step {step!r}")
            args = tuple(int(x) for x in m.groups()[1:] if x is not None)
            if m.group(1) == "PARITY":
                parity = args
            else:
                gates.append(Gate(m.group(1), args))
        bases = []
        for i, token in enumerate(meas.split(), 1):
            m = re.fullmatch(r"(X|Z|R\([+-][0-9.]+\))(\d)", token)
            if not m or int(m.group(2)) != i:
                raise ValueError(f"cannot parse measurement {token!r}")
            b = m.group(1)
            bases.append(MeasurementBasis.parse(b if len(b) == 1 else "R" + b[2:-1]))
        return cls(tuple(bases), tuple(gates), parity)

    @property
    def basis_string(self) -> str | None:
        """e.g. "X1X2Z3" when every qubit is measured in a Pauli basis and nothing else happens."""
        if self.parity or self.gates or any(b.kind == "angle" for b in self.measurements):
            return None
        return "".join(f"{b.kind}{i}" for i, b in enumerate(self.measurements, 1))


def _fmt_meas(basis: MeasurementBasis, i: int) -> str:
    if basis.kind == "angle":
        return f"R({basis.theta:+.6f}){i}"
    return f"{basis.kind}{i}"


COMPUTATION_A = Command((PAULI_X, PAULI_X, PAULI_Z), parity=(1, 2))
COMPUTATION_B = Command((PAULI_Z, PAULI_X, PAULI_Z), gates=(qsim.CNOT(2, 3),))

ROTATED = math.pi / 4


@dataclass(frozen=True)
class TestSetting:
    """Client's secret choice behind a measurement-only command.

    ``question`` is the CHSH question bit carried by the command. ``rotated``
    says whether that question is asked in the (Z +/- X)/sqrt(2) bases.
    ``filler`` picks the bases of the qubits that carry no question in a
    rotated command.
    """

    __test__ = False  # not a pytest class

    rotated: bool
    question: int
    filler: int = 0

    def __post_init__(self):
        if not self.rotated and self.filler:
            object.__setattr__(self, "filler", 0)


def _pauli(bit) -> MeasurementBasis:
    return PAULI_X if bit else PAULI_Z


def test_command(server: Server, setting: TestSetting) -> Command:
    q, f = setting.question, setting.filler
    tilt = qsim.bloch((-1) ** q * ROTATED)
    if server is Server.ALICE:
        # question on qubit 2 (unrotated) or qubit 1 (rotated); qubits 2,3 share a basis
        if setting.rotated:
            return Command((tilt, _pauli(f), _pauli(f)))
        return Command((PAULI_Z, _pauli(q), _pauli(q)))
    # question on qubit 1 (unrotated) or qubit 2 (rotated); qubit 3 always Z
    if setting.rotated:
        return Command((_pauli(f), tilt, PAULI_Z))
    return Command((_pauli(q), _pauli(q), PAULI_Z))


def _settings() -> tuple:
    out = [TestSetting(False, q) for q in (0, 1)]
    out += [TestSetting(True, q, f) for q in (0, 1) for f in (0, 1)]
    return tuple(out)


test_command.__test__ = False
TEST_SETTINGS = _settings()


def _alphabet(server: Server) -> tuple:
    compute = COMPUTATION_A if server is Server.ALICE else COMPUTATION_B
    return (compute,) + tuple(test_command(server, s) for s in TEST_SETTINGS)


ALPHABET = {Server.ALICE: _alphabet(Server.ALICE), Server.BOB: _alphabet(Server.BOB)}
_ALPHABET_INDEX = {s: {str(c): i for i, c in enumerate(cmds)} for s, cmds in ALPHABET.items()}
ALPHABET_SIZE = len(ALPHABET[Server.ALICE])


def command_index(server: Server, command: Command | str) -> int:
    try:
        return _ALPHABET_INDEX[server][str(command)]
    except KeyError:
        raise ValueError(f"{command} is not in {server.value}'s command alphabet") from None


def setting_of(index: int) -> TestSetting | None:
    return None if index == 0 else TEST_SETTINGS[index - 1]


def _setting_index(rotated, question, filler):
    return np.where(rotated, 3 + 2 * question + filler, 1 + question)


@dataclass(frozen=True)
class RoundPlan:
    """The client's secret for one round. Servers never see this."""

    sub_protocol: SubProtocol
    orientation: Orientation | None
    alice: TestSetting | None
    bob: TestSetting | None

    @property
    def chsh_pair(self) -> int | None:
        if self.orientation is None:
            return None
        return 1 if self.orientation is Orientation.ALICE_ROTATED else 2

    @property
    def questions(self) -> tuple | None:
        if self.sub_protocol is not SubProtocol.CHSH:
            return None
        return self.alice.question, self.bob.question

    @property
    def tomography_basis(self) -> str | None:
        """Stabilizer basis string of the tested server, or None when the round is not scored."""
        if self.sub_protocol is SubProtocol.STATE_TOMO and not self.bob.rotated:
            return test_command(Server.BOB, self.bob).basis_string
        if self.sub_protocol is SubProtocol.PROCESS_TOMO and not self.alice.rotated:
            return test_command(Server.ALICE, self.alice).basis_string
        return None

    def command(self, server: Server) -> Command:
        setting = self.alice if server is Server.ALICE else self.bob
        if setting is None:
            return ALPHABET[server][0]
        return test_command(server, setting)

    def to_dict(self) -> dict:
        def enc(s):
            return None if s is None else [int(s.rotated), s.question, s.filler]

        return {
            "sub_protocol": self.sub_protocol.value,
            "orientation": None if self.orientation is None else self.orientation.value,
            "alice": enc(self.alice),
            "bob": enc(self.bob),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RoundPlan":
        def dec(v):
            return None if v is None else TestSetting(bool(v[0]), int(v[1]), int(v[2]))

        return cls(
            SubProtocol(d["sub_protocol"]),
            None if d["orientation"] is None else Orientation(d["orientation"]),
            dec(d["alice"]),
            dec(d["bob"]),
        )


@dataclass
class PlanTable:
    """Columnar plans for many rounds.

    ``alice_cmd``/``bob_cmd`` index into ``ALPHABET``; index 0 is the
    Computation command, the rest map onto ``TEST_SETTINGS``.
    ``orientation`` is -1 outside CHSH rounds.
    """

    sub: np.ndarray
    orientation: np.ndarray
    alice_cmd: np.ndarray
    bob_cmd: np.ndarray

    def __len__(self) -> int:
        return len(self.sub)

    def plan(self, i: int) -> RoundPlan:
        o = int(self.orientation[i])
        return RoundPlan(
            SubProtocol.from_code(self.sub[i]),
            None if o < 0 else ORIENTATIONS[o],
            setting_of(int(self.alice_cmd[i])),
            setting_of(int(self.bob_cmd[i])),
        )

    @classmethod
    def from_plans(cls, plans: Sequence[RoundPlan]) -> "PlanTable":
        def idx(server, plan):
            return command_index(server, plan.command(server))

        return cls(
            np.array([p.sub_protocol.code for p in plans], dtype=np.int8),
            np.array([-1 if p.orientation is None else ORIENTATIONS.index(p.orientation) for p in plans], dtype=np.int8),
            np.array([idx(Server.ALICE, p) for p in plans], dtype=np.int8),
            np.array([idx(Server.BOB, p) for p in plans], dtype=np.int8),
        )


def plan_rounds(subs: np.ndarray, rng: np.random.Generator) -> PlanTable:
    """Draw the client's secrets for each round and pick both commands.

    A measurement-only command is rotated with probability 1/2 and carries a
    uniform question bit, whatever the sub-protocol. In CHSH rounds exactly one
    server gets the rotated command, chosen by the orientation bit. That keeps
    every server's command distribution the same in the two sub-protocols in
    which it measures only.
    """
    subs = np.asarray(subs, dtype=np.int8)
    n = len(subs)
    o, ra, rb, qa, qb, fa, fb = rng.integers(0, 2, size=(7, n), dtype=np.int8)
    chsh = subs == SubProtocol.CHSH.code
    rot_a = np.where(chsh, o == 0, ra == 1)
    rot_b = np.where(chsh, o == 1, rb == 1)
    fa = np.where(rot_a, fa, 0)
    fb = np.where(rot_b, fb, 0)
    comp_a = (subs == SubProtocol.COMPUTATION.code) | (subs == SubProtocol.STATE_TOMO.code)
    comp_b = (subs == SubProtocol.COMPUTATION.code) | (subs == SubProtocol.PROCESS_TOMO.code)
    alice = np.where(comp_a, 0, _setting_index(rot_a, qa, fa)).astype(np.int8)
    bob = np.where(comp_b, 0, _setting_index(rot_b, qb, fb)).astype(np.int8)
    orientation = np.where(chsh, o, -1).astype(np.int8)
    return PlanTable(subs, orientation, alice, bob)


def commands_for(sub: SubProtocol, rng: np.random.Generator):
    """Returns ``(alice_command, bob_command, plan)`` for one round."""
    table = plan_rounds(np.array([SubProtocol(sub).code]), rng)
    plan = table.plan(0)
    return plan.command(Server.ALICE), plan.command(Server.BOB), plan


# ---------------------------------------------------------------------------
# Strategies and server state machines
# ---------------------------------------------------------------------------


class Honesty(str, Enum):
    HONEST = "honest"
    FLIP_FIRST_REPORT = "flip-first-report"
    MEASURE_X3_INSTEAD_OF_Z3 = "measure-x3-instead-of-z3"
    BELL_CONTROL_IN_Z = "bell-control-in-z"
    FIRST_QUBIT_BASIS_SWAP = "first-qubit-basis-swap"
    ANGLE_OFFSET = "angle-offset"


@dataclass(frozen=True)
class ServerStrategy:
    honesty: Honesty = Honesty.HONEST
    offset: float = 0.0  # radians, ANGLE_OFFSET only

    def __post_init__(self):
        object.__setattr__(self, "honesty", Honesty(self.honesty))
        if self.offset and self.honesty is not Honesty.ANGLE_OFFSET:
            raise ValueError("offset only applies to the angle-offset strategy")

    def __str__(self) -> str:
        if self.honesty is Honesty.ANGLE_OFFSET:
            return f"{self.honesty.value}:{self.offset!r}"
        return self.honesty.value

    @classmethod
    def parse(cls, text: str) -> "ServerStrategy":
        name, _, arg = text.partition(":")
        if Honesty(name) is Honesty.ANGLE_OFFSET:
            return cls(Honesty.ANGLE_OFFSET, float(arg or 0.0))
        return cls(Honesty(name))

    def basis_for(self, command: Command, qubit: int, basis: MeasurementBasis) -> MeasurementBasis:
        h = self.honesty
        if h is Honesty.MEASURE_X3_INSTEAD_OF_Z3 and qubit == 3 and basis == PAULI_Z:
            return PAULI_X
        if h is Honesty.BELL_CONTROL_IN_Z and basis == PAULI_X:
            if any(g.name == "CNOT" and g.qubits[0] == qubit for g in command.gates):
                return PAULI_Z
        if h is Honesty.FIRST_QUBIT_BASIS_SWAP and qubit == 1 and basis.kind in ("X", "Z"):
            return PAULI_Z if basis == PAULI_X else PAULI_X
        if h is Honesty.ANGLE_OFFSET:
            return qsim.bloch(basis.angle + self.offset)
        return basis

    def report(self, measured: np.ndarray) -> np.ndarray:
        reported = measured.copy()
        if self.honesty is Honesty.FLIP_FIRST_REPORT:
            reported[:, 0] *= -1
        return reported


HONEST = ServerStrategy()


class ServerMachine:
    """One server. Sees its command and a handle to its own qubits, nothing else."""

    def __init__(self, role: Server, strategy: ServerStrategy = HONEST):
        self.role = role
        self.strategy = strategy

    def execute(self, command: Command, handle: "Handle") -> np.ndarray:
        if command.parity:
            handle.parity_project(*command.parity)
        for gate in command.gates:
            handle.apply(gate)
        measured = [
            handle.measure(q, self.strategy.basis_for(command, q, basis))
            for q, basis in enumerate(command.measurements, 1)
        ]
        return self.strategy.report(np.stack(measured, axis=1))


# ---------------------------------------------------------------------------
# Referee
# ---------------------------------------------------------------------------


class AuditError(RuntimeError):
    """A server tried to touch a qubit it does not own."""


@dataclass(frozen=True)
class AuditEntry:
    server: Server
    op: str
    labels: tuple
    ok: bool = True

    def __str__(self) -> str:
        flag = "" if self.ok else " VIOLATION"
        return f"{self.server.value}:{self.op}({','.join(self.labels)}){flag}"


class BornSampler:
    """Draws outcomes with the Born rule."""

    def __init__(self, rng: np.random.Generator):
        self.rng = rng

    def measure(self, state, label, basis, rows=None):
        return state.measure(label, basis, uniforms=self.rng.random(state.size))[0]

    def parity(self, state, q1, q2, rows=None):
        return state.parity_project(q1, q2, uniforms=self.rng.random(state.size))[0]


class EnumeratingSampler:
    """Forces outcome ``k`` of row ``r`` to bit ``k`` of ``r``; parity always succeeds.

    Row weights accumulate the Born probability of the forced branch
    (conditioned on parity success), so a batch of ``2**n_measurements`` rows
    enumerates the whole outcome distribution.
    """

    def __init__(self, size: int):
        self.rows = np.arange(size)
        self.weights = np.ones(size)
        self.count = 0

    def measure(self, state, label, basis, rows=None):
        bits = (self.rows >> self.count) & 1
        self.count += 1
        outcomes, prob = state.measure(label, basis, forced=np.where(bits == 1, -1, 1))
        self.weights *= prob
        return outcomes

    def parity(self, state, q1, q2, rows=None):
        success, _ = state.parity_project(q1, q2, forced=np.ones(state.size, dtype=bool))
        return success


class Handle:
    """Capability a server uses to act on its own qubits.

    Qubits are addressed by local index 1..3 or by label. Anything outside the
    server's ownership raises :class:`AuditError` after being logged.
    """

    def __init__(self, referee: "Referee", server: Server):
        self._referee = referee
        self.server = server

    def _resolve(self, qubit, op: str) -> str:
        own = self._referee.ownership
        if isinstance(qubit, (int, np.integer)):
            try:
                return own.label(self.server, int(qubit))
            except IndexError:
                label = str(qubit)
        else:
            label = str(qubit)
            if own.owner(label) is self.server:
                return label
        self._referee.log(AuditEntry(self.server, op, (label,), ok=False))
        raise AuditError(f"{self.server.value} attempted {op} on qubit {label!r} it does not own")

    def parity_project(self, q1, q2) -> None:
        labels = (self._resolve(q1, "PARITY"), self._resolve(q2, "PARITY"))
        self._referee.log(AuditEntry(self.server, "PARITY", labels))
        self._referee.parity(*labels)

    def apply(self, gate: Gate) -> None:
        labels = tuple(self._resolve(q, gate.name) for q in gate.qubits)
        self._referee.log(AuditEntry(self.server, gate.name, labels))
        self._referee.register.state.apply(Gate(gate.name, labels))

    def measure(self, qubit, basis: MeasurementBasis) -> np.ndarray:
        label = self._resolve(qubit, "MEASURE")
        self._referee.log(AuditEntry(self.server, f"MEASURE[{basis}]", (label,)))
        physical = effective_basis(basis, self.server, self._referee.noise)
        return self._referee.sampler.measure(self._referee.register.state, label, physical)


class Referee:
    """Holds the joint register for a batch of rounds that share both commands.

    With ``resample_parity`` set, rows whose parity post-selection fails get
    fresh pairs and are projected again until every row succeeds; the number
    of attempts per row is kept in ``parity_attempts``.
    """

    def __init__(
        self,
        noise: NoiseModel,
        sampler,
        rng: np.random.Generator | None = None,
        ownership: OwnershipMap = DEFAULT_OWNERSHIP,
        resample_parity: bool = True,
    ):
        self.noise = noise
        self.sampler = sampler
        self.rng = rng if rng is not None else getattr(sampler, "rng", None)
        self.ownership = ownership
        self.resample_parity = resample_parity
        self.audit: list[AuditEntry] = []
        self.register: JointRegister | None = None
        self.parity_attempts = None
        self.parity_success = None

    def distribute(self, size: int) -> JointRegister:
        if self.rng is None:
            if not self.noise.is_ideal and self.noise.werner_p < 1.0:
                raise ValueError("noisy pair distribution needs a random stream")
            rng = np.random.default_rng(0)  # draws unused when werner_p == 1
        else:
            rng = self.rng
        self.register = distribute_batch(self.noise, size, rng, self.ownership)
        self.parity_attempts = np.zeros(size, dtype=np.int64)
        self.parity_success = np.ones(size, dtype=bool)
        return self.register

    def log(self, entry: AuditEntry) -> None:
        self.audit.append(entry)

    @property
    def audit_ok(self) -> bool:
        return all(e.ok for e in self.audit)

    def handle(self, server: Server) -> Handle:
        return Handle(self, server)

    def parity(self, q1: str, q2: str) -> None:
        state = self.register.state
        success = self.sampler.parity(state, q1, q2)
        self.parity_attempts += 1
        if self.resample_parity:
            while not success.all():
                failed = ~success
                fresh = distribute_batch(self.noise, int(failed.sum()), self.rng, self.ownership).state
                ok = self.sampler.parity(fresh, q1, q2)
                state.assign(failed, fresh)
                self.parity_attempts[failed] += 1
                success[failed] = ok
        self.parity_success &= success

    def execute(self, machine: ServerMachine, command: Command) -> np.ndarray:
        return machine.execute(command, self.handle(machine.role))


# ---------------------------------------------------------------------------
# Transcripts and batch execution
# ---------------------------------------------------------------------------


@dataclass
class RoundTranscript:
    round_index: int
    plan: RoundPlan
    commands: dict
    outcomes: dict
    parity_success: bool
    parity_attempts: int = 1
    audit_ok: bool = True
    audit: list = field(default_factory=list)

    @property
    def sub_protocol(self) -> SubProtocol:
        return self.plan.sub_protocol

    def to_dict(self) -> dict:
        return {
            "round_index": self.round_index,
            "sub_protocol": self.plan.sub_protocol.value,
            "commands": dict(self.commands),
            "outcomes": {k: [int(x) for x in v] for k, v in self.outcomes.items()},
            "parity_success": bool(self.parity_success),
            "parity_attempts": int(self.parity_attempts),
            "audit_ok": bool(self.audit_ok),
            "plan": self.plan.to_dict(),
            "audit": list(self.audit),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_dict(cls, d: dict) -> "RoundTranscript":
        for key in ("round_index", "sub_protocol", "commands", "outcomes", "parity_success", "audit_ok", "plan"):
            if key not in d:
                raise ValueError(f"transcript is missing field {key!r}")
        plan = RoundPlan.from_dict(d["plan"])
        if plan.sub_protocol.value != d["sub_protocol"]:
            raise ValueError("transcript sub_protocol disagrees with its plan")
        return cls(
            int(d["round_index"]),
            plan,
            dict(d["commands"]),
            {k: [int(x) for x in v] for k, v in d["outcomes"].items()},
            bool(d["parity_success"]),
            int(d.get("parity_attempts", 1)),
            bool(d["audit_ok"]),
            list(d.get("audit", [])),
        )

    @classmethod
    def from_json(cls, line: str) -> "RoundTranscript":
        return cls.from_dict(json.loads(line))


@dataclass
class RoundTable:
    """Columnar record of executed rounds; transcripts are views onto rows."""

    plans: PlanTable
    round_index: np.ndarray
    alice_out: np.ndarray
    bob_out: np.ndarray
    parity_success: np.ndarray
    parity_attempts: np.ndarray
    audit_ok: np.ndarray
    weight: np.ndarray
    audit_logs: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.round_index)

    @property
    def sub(self) -> np.ndarray:
        return self.plans.sub

    def transcript(self, i: int) -> RoundTranscript:
        key = (int(self.plans.alice_cmd[i]), int(self.plans.bob_cmd[i]))
        plan = self.plans.plan(i)
        return RoundTranscript(
            round_index=int(self.round_index[i]),
            plan=plan,
            commands={"alice": str(plan.command(Server.ALICE)), "bob": str(plan.command(Server.BOB))},
            outcomes={"alice": self.alice_out[i].tolist(), "bob": self.bob_out[i].tolist()},
            parity_success=bool(self.parity_success[i]),
            parity_attempts=int(self.parity_attempts[i]),
            audit_ok=bool(self.audit_ok[i]),
            audit=list(self.audit_logs.get(key, [])),
        )

    def transcripts(self) -> Iterable[RoundTranscript]:
        for i in range(len(self)):
            yield self.transcript(i)

    @classmethod
    def from_transcripts(cls, transcripts: Sequence[RoundTranscript]) -> "RoundTable":
        transcripts = list(transcripts)
        plans = PlanTable.from_plans([t.plan for t in transcripts])
        for t, a, b in zip(transcripts, plans.alice_cmd, plans.bob_cmd):
            if t.commands["alice"] != str(ALPHABET[Server.ALICE][a]) or t.commands["bob"] != str(ALPHABET[Server.BOB][b]):
                raise ValueError(f"round {t.round_index}: commands disagree with the recorded plan")
        audit_logs = {}
        for t, a, b in zip(transcripts, plans.alice_cmd, plans.bob_cmd):
            audit_logs.setdefault((int(a), int(b)), t.audit)
        n = len(transcripts)
        return cls(
            plans=plans,
            round_index=np.array([t.round_index for t in transcripts], dtype=np.int64),
            alice_out=np.array([t.outcomes["alice"] for t in transcripts], dtype=np.int8).reshape(n, 3),
            bob_out=np.array([t.outcomes["bob"] for t in transcripts], dtype=np.int8).reshape(n, 3),
            parity_success=np.array([t.parity_success for t in transcripts], dtype=bool),
            parity_attempts=np.array([t.parity_attempts for t in transcripts], dtype=np.int64),
            audit_ok=np.array([t.audit_ok for t in transcripts], dtype=bool),
            weight=np.ones(n),
            audit_logs=audit_logs,
        )

    @classmethod
    def concat(cls, tables: Sequence["RoundTable"]) -> "RoundTable":
        tables = list(tables)
        plans = PlanTable(*(np.concatenate([getattr(t.plans, f) for t in tables]) for f in ("sub", "orientation", "alice_cmd", "bob_cmd")))
        logs = {}
        for t in tables:
            for k, v in t.audit_logs.items():
                logs.setdefault(k, v)
        cat = lambda name: np.concatenate([getattr(t, name) for t in tables])  # noqa: E731
        return cls(
            plans,
            cat("round_index"),
            cat("alice_out"),
            cat("bob_out"),
            cat("parity_success"),
            cat("parity_attempts"),
            cat("audit_ok"),
            cat("weight"),
            logs,
        )


@dataclass(frozen=True)
class Strategies:
    alice: ServerStrategy = HONEST
    bob: ServerStrategy = HONEST


def run_batch(
    plans: PlanTable,
    strategies: Strategies,
    noise: NoiseModel,
    rng: np.random.Generator,
    resample_parity: bool = True,
    first_index: int = 0,
) -> RoundTable:
    """Execute every planned round, grouped by command pair, Alice before Bob."""
    n = len(plans)
    alice_out = np.zeros((n, 3), dtype=np.int8)
    bob_out = np.zeros((n, 3), dtype=np.int8)
    parity_success = np.ones(n, dtype=bool)
    parity_attempts = np.zeros(n, dtype=np.int64)
    audit_ok = np.ones(n, dtype=bool)
    logs = {}
    alice = ServerMachine(Server.ALICE, strategies.alice)
    bob = ServerMachine(Server.BOB, strategies.bob)
    keys = plans.alice_cmd.astype(np.int64) * ALPHABET_SIZE + plans.bob_cmd
    for key in np.unique(keys):
        rows = np.nonzero(keys == key)[0]
        a_idx, b_idx = divmod(int(key), ALPHABET_SIZE)
        referee = Referee(noise, BornSampler(rng), resample_parity=resample_parity)
        referee.distribute(len(rows))
        alice_out[rows] = referee.execute(alice, ALPHABET[Server.ALICE][a_idx])
        bob_out[rows] = referee.execute(bob, ALPHABET[Server.BOB][b_idx])
        parity_success[rows] = referee.parity_success
        parity_attempts[rows] = referee.parity_attempts
        audit_ok[rows] = referee.audit_ok
        logs[(a_idx, b_idx)] = [str(e) for e in referee.audit]
    return RoundTable(
        plans=plans,
        round_index=np.arange(first_index, first_index + n, dtype=np.int64),
        alice_out=alice_out,
        bob_out=bob_out,
        parity_success=parity_success,
        parity_attempts=parity_attempts,
        audit_ok=audit_ok,
        weight=np.ones(n),
        audit_logs=logs,
    )


def enumerate_round(plan: RoundPlan, strategies: Strategies = Strategies()) -> RoundTable:
    """Every outcome branch of one ideal-noise round, weighted by its probability.

    Parity post-selection is conditioned on success. Rows with zero weight are
    dropped.
    """
    size = 2**6
    sampler = EnumeratingSampler(size)
    referee = Referee(IDEAL, sampler, resample_parity=False)
    referee.distribute(size)
    a_out = referee.execute(ServerMachine(Server.ALICE, strategies.alice), plan.command(Server.ALICE))
    b_out = referee.execute(ServerMachine(Server.BOB, strategies.bob), plan.command(Server.BOB))
    keep = sampler.weights > 1e-15
    plans = PlanTable.from_plans([plan] * int(keep.sum()))
    return RoundTable(
        plans=plans,
        round_index=np.arange(int(keep.sum())),
        alice_out=a_out[keep],
        bob_out=b_out[keep],
        parity_success=np.ones(int(keep.sum()), dtype=bool),
        parity_attempts=np.ones(int(keep.sum()), dtype=np.int64),
        audit_ok=np.full(int(keep.sum()), referee.audit_ok),
        weight=sampler.weights[keep],
        audit_logs={},
    )


def server_execute(
    command: Command,
    strategy: ServerStrategy,
    server: Server,
    referee: Referee,
) -> np.ndarray:
    """Run one server's command against the referee's current register."""
    return referee.execute(ServerMachine(server, strategy), command)


def run_round(
    eta: float,
    strategies: Strategies,
    noise: NoiseModel,
    rng: np.random.Generator,
    plan: RoundPlan | None = None,
    resample_parity: bool = False,
    round_index: int = 0,
) -> RoundTranscript:
    """One complete round.

    By default a failed parity post-selection is reported in the transcript
    (``parity_success`` False) and left for the caller to redo.
    """
    if plan is None:
        sub = sample_subprotocol(eta, rng)
        table = plan_rounds(np.array([sub.code]), rng)
    else:
        _check_eta(eta)
        table = PlanTable.from_plans([plan])
    result = run_batch(table, strategies, noise, rng, resample_parity=resample_parity, first_index=round_index)
    return result.transcript(0)


# ---------------------------------------------------------------------------
# Client-side decoding
# ---------------------------------------------------------------------------


def outcome_bit(outcome):
    """+1 -> 0, -1 -> 1."""
    return (1 - np.asarray(outcome)) // 2


@dataclass(frozen=True)
class ChshRound:
    A: int
    B: int
    M: int
    N_bit: int
    orientation: Orientation

    @property
    def win(self) -> bool:
        return (self.A & self.B) == (self.M ^ self.N_bit)


def decode_chsh(table: RoundTable):
    """Question and answer bits for the CHSH rounds of ``table``.

    Returns ``(rows, A, B, M, N, win)`` with ``rows`` the indices of the CHSH
    rounds.
    """
    rows = np.nonzero(table.sub == SubProtocol.CHSH.code)[0]
    p = table.plans
    a_set = p.alice_cmd[rows] - 1
    b_set = p.bob_cmd[rows] - 1
    qbit = np.array([s.question for s in TEST_SETTINGS], dtype=np.int64)
    A, B = qbit[a_set], qbit[b_set]
    pair = np.where(p.orientation[rows] == 0, 0, 1)  # zero-based column
    M = outcome_bit(table.alice_out[rows, pair])
    N = outcome_bit(table.bob_out[rows, pair])
    win = (A & B) == (M ^ N)
    return rows, A, B, M, N, win


def chsh_round(transcript: RoundTranscript) -> ChshRound:
    plan = transcript.plan
    if plan.sub_protocol is not SubProtocol.CHSH:
        raise ValueError("not a CHSH round")
    col = plan.chsh_pair - 1
    A, B = plan.questions
    M = int(outcome_bit(transcript.outcomes["alice"][col]))
    N = int(outcome_bit(transcript.outcomes["bob"][col]))
    return ChshRound(A, B, M, N, plan.orientation)


def frame_corrected_output(alice_out: np.ndarray, bob_out: np.ndarray) -> np.ndarray:
    """Output bit of the computation after undoing Alice's Pauli frame.

    a1*a2 = -1 leaves Bob's pair in Phi-, i.e. a Z on his qubit 2, which flips
    the X readout of that qubit. a3 only puts an X on qubit 3, which the readout
    ignores.
    """
    alice_out = np.atleast_2d(alice_out)
    bob_out = np.atleast_2d(bob_out)
    return outcome_bit(bob_out[:, 1] * alice_out[:, 0] * alice_out[:, 1])


def postselected(alice_out: np.ndarray) -> np.ndarray:
    """Rounds where Alice reported a1 = a2 = a3 = +1."""
    return np.all(np.atleast_2d(alice_out) == 1, axis=1)
