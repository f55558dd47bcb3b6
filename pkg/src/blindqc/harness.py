"""Batch experiments: scenario presets, aggregation into reports, sweeps, file output."""
from __future__ import annotations

import csv
import io
import json
import math
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from functools import lru_cache
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy import stats

from . import parties, shor, verify
from .parties import (
    ALPHABET_SIZE,
    Honesty,
    Orientation,
    PlanTable,
    RoundPlan,
    RoundTable,
    RoundTranscript,
    Server,
    ServerStrategy,
    Strategies,
    SubProtocol,
    TestSetting,
)
from .resources import NoiseModel, hwp_to_bloch

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

# Bob's HWP set 5 degrees too high
CHSH_DISHONEST_OFFSET = hwp_to_bloch(5.0)

SCENARIOS = {
    "honest": Strategies(),
    "chsh-dishonest-offset": Strategies(bob=ServerStrategy(Honesty.ANGLE_OFFSET, CHSH_DISHONEST_OFFSET)),
    "alice-flip-report": Strategies(alice=ServerStrategy(Honesty.FLIP_FIRST_REPORT)),
    "alice-x3": Strategies(alice=ServerStrategy(Honesty.MEASURE_X3_INSTEAD_OF_Z3)),
    "bob-z2z3": Strategies(bob=ServerStrategy(Honesty.BELL_CONTROL_IN_Z)),
    "bob-q1-swap": Strategies(bob=ServerStrategy(Honesty.FIRST_QUBIT_BASIS_SWAP)),
}
MODES = ("frame-correct", "postselect")
DEFAULT_CHUNK = 8192


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    scenario: str = "honest"
    n_rounds: int = 24000
    eta: float = 0.25
    noise: NoiseModel = field(default_factory=NoiseModel)
    mode: str = "frame-correct"
    seed: int = 0
    alice_strategy: str = "honest"  # custom scenario only
    bob_strategy: str = "honest"  # custom scenario only
    transcript_path: str | None = None
    report_path: str | None = None
    csv_path: str | None = None
    chunk_size: int = DEFAULT_CHUNK

    def __post_init__(self):
        if self.scenario not in SCENARIOS and self.scenario != "custom":
            raise ConfigError(f"unknown scenario {self.scenario!r}")
        if int(self.n_rounds) != self.n_rounds or self.n_rounds < 1:
            raise ConfigError(f"n_rounds must be a positive integer, got {self.n_rounds}")
        if not 0.0 < self.eta < 1.0:
            raise ConfigError(f"eta must lie strictly between 0 and 1, got {self.eta}")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if not 0 <= int(self.seed) < 2**64:
            raise ConfigError("seed must be a 64-bit unsigned integer")
        if self.chunk_size < 1:
            raise ConfigError("chunk_size must be positive")
        try:
            self.strategies
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    @property
    def strategies(self) -> Strategies:
        if self.scenario == "custom":
            return Strategies(ServerStrategy.parse(self.alice_strategy), ServerStrategy.parse(self.bob_strategy))
        return SCENARIOS[self.scenario]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["noise"] = asdict(self.noise)
        return d

    @classmethod
    def from_mapping(cls, values: dict) -> "RunConfig":
        """Build from flat keys: RunConfig fields plus werner_p and the offsets.

        Offsets may be given in radians (``alice_angle_offset``,
        ``bob_angle_offset``) or in Bloch-sphere degrees (``alice_offset_deg``,
        ``bob_offset_deg``).
        """
        values = dict(values)
        noise_kw = {}
        if "werner_p" in values:
            noise_kw["werner_p"] = float(values.pop("werner_p"))
        for who in ("alice", "bob"):
            rad, deg = f"{who}_angle_offset", f"{who}_offset_deg"
            if rad in values and deg in values:
                raise ConfigError(f"give {rad} or {deg}, not both")
            if rad in values:
                noise_kw[rad] = float(values.pop(rad))
            if deg in values:
                noise_kw[rad] = math.radians(float(values.pop(deg)))
        known = {f.name for f in fields(cls)} - {"noise"}
        unknown = set(values) - known
        if unknown:
            raise ConfigError(f"unknown configuration keys: {sorted(unknown)}")
        try:
            noise = NoiseModel(**noise_kw)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        return cls(noise=noise, **values)

    @classmethod
    def from_file(cls, path, overrides: dict | None = None) -> "RunConfig":
        with open(path, "rb") as fh:
            try:
                values = tomllib.load(fh)
            except tomllib.TOMLDecodeError as exc:
                raise ConfigError(f"{path}: {exc}") from None
        if any(isinstance(v, dict) for v in values.values()):
            raise ConfigError(f"{path}: configuration must be flat key = value pairs")
        values.update(overrides or {})
        return cls.from_mapping(values)


# ---------------------------------------------------------------------------
# Execution
# ---------------------------------------------------------------------------


def chunk_rng(seed: int, chunk: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(int(chunk),)))


def simulate(
    n_rounds: int,
    strategies: Strategies,
    noise: NoiseModel,
    seed: int,
    eta: float = 0.25,
    sub: SubProtocol | None = None,
    chunk_size: int = DEFAULT_CHUNK,
) -> RoundTable:
    """Run ``n_rounds`` rounds in chunks with independent seeded streams.

    With ``sub`` given every round uses that sub-protocol instead of sampling.
    """
    tables = []
    for c, start in enumerate(range(0, n_rounds, chunk_size)):
        rng = chunk_rng(seed, c)
        size = min(chunk_size, n_rounds - start)
        if sub is None:
            subs = parties.sample_subprotocols(eta, size, rng)
        else:
            subs = np.full(size, SubProtocol(sub).code, dtype=np.int8)
        plans = parties.plan_rounds(subs, rng)
        tables.append(parties.run_batch(plans, strategies, noise, rng, first_index=start))
    return RoundTable.concat(tables)


def run_table(config: RunConfig) -> RoundTable:
    return simulate(
        config.n_rounds, config.strategies, config.noise, config.seed, config.eta, chunk_size=config.chunk_size
    )


def run_experiment(config: RunConfig) -> "RunReport":
    return aggregate(run_table(config), config.mode, config.strategies, config.to_dict())


def chsh_tally(table: RoundTable) -> verify.ChshTally:
    _, _, _, _, _, win = parties.decode_chsh(table)
    return verify.ChshTally(len(win), int(win.sum()))


# ---------------------------------------------------------------------------
# Ideal predictions by exhaustive enumeration
# ---------------------------------------------------------------------------


def _chsh_plans():
    for o in Orientation:
        for qa in (0, 1):
            for qb in (0, 1):
                for f in (0, 1):
                    a = TestSetting(o is Orientation.ALICE_ROTATED, qa, f)
                    b = TestSetting(o is Orientation.BOB_ROTATED, qb, f)
                    yield RoundPlan(SubProtocol.CHSH, o, a, b)


def _tomo_plan(sub: SubProtocol, basis: str) -> RoundPlan:
    setting = TestSetting(False, 1 if "X2" in basis else 0)
    if sub is SubProtocol.STATE_TOMO:
        return RoundPlan(sub, None, None, setting)
    return RoundPlan(sub, None, setting, None)


@lru_cache(maxsize=None)
def theory(strategies: Strategies, mode: str = "frame-correct") -> dict:
    """Noise-free predictions for a pair of strategies.

    Keys: ``chsh`` (win probability), ``(sub, basis)`` pass probabilities, and
    ``output_one`` (probability the computation outputs 1).
    """
    out = {}
    wins = []
    for plan in _chsh_plans():
        t = parties.enumerate_round(plan, strategies)
        *_, win = parties.decode_chsh(t)
        wins.append(float(np.sum(t.weight * win)))
    out["chsh"] = float(np.mean(wins))
    for sub, bases in verify.TOMOGRAPHY_BASES.items():
        for basis in bases:
            t = parties.enumerate_round(_tomo_plan(sub, basis), strategies)
            ok = _tomo_pass(t, sub, basis, np.arange(len(t)))
            out[(sub, basis)] = float(np.sum(t.weight * ok))
    t = parties.enumerate_round(RoundPlan(SubProtocol.COMPUTATION, None, None, None), strategies)
    bits = _output_bits(t, mode)
    keep = _computation_keep(t, mode)
    out["output_one"] = float(np.sum(t.weight[keep] * bits[keep]) / np.sum(t.weight[keep]))
    return out


# ---------------------------------------------------------------------------
# Aggregation
# ---------------------------------------------------------------------------


def _tomo_pass(table: RoundTable, sub: SubProtocol, basis: str, rows: np.ndarray) -> np.ndarray:
    tested = verify.tested_server(sub)
    t_out = (table.bob_out if tested is Server.BOB else table.alice_out)[rows]
    s_out = (table.alice_out if tested is Server.BOB else table.bob_out)[rows]
    return verify.syndrome_pass(sub, basis, s_out, t_out)


def _tomo_rows(table: RoundTable, sub: SubProtocol, basis: str) -> np.ndarray:
    tested = verify.tested_server(sub)
    cmd_col = table.plans.bob_cmd if tested is Server.BOB else table.plans.alice_cmd
    target = next(i for i, c in enumerate(parties.ALPHABET[tested]) if c.basis_string == basis)
    return np.nonzero((table.sub == sub.code) & (cmd_col == target) & table.parity_success)[0]


def _output_bits(table: RoundTable, mode: str) -> np.ndarray:
    if mode == "postselect":
        return parties.outcome_bit(table.bob_out[:, 1]).astype(np.int64)
    return parties.frame_corrected_output(table.alice_out, table.bob_out).astype(np.int64)


def _computation_keep(table: RoundTable, mode: str) -> np.ndarray:
    keep = (table.sub == SubProtocol.COMPUTATION.code) & table.parity_success
    if mode == "postselect":
        keep &= parties.postselected(table.alice_out)
    return keep


def computation_output_bits(table: RoundTable, mode: str = "frame-correct") -> np.ndarray:
    keep = _computation_keep(table, mode)
    return _output_bits(table, mode)[keep]


def _rate(k: int, n: int) -> dict:
    if n == 0:
        return {"rate": None, "stderr": None}
    p = k / n
    return {"rate": p, "stderr": verify.binomial_stderr(p, n)}


def _chi2(matrix: np.ndarray) -> dict:
    m = np.asarray(matrix, dtype=float)
    m = m[m.sum(axis=1) > 0][:, m.sum(axis=0) > 0]
    if m.shape[0] < 2 or m.shape[1] < 2:
        return {"chi2": 0.0, "dof": 0, "p_value": 1.0}
    chi2, p, dof, _ = stats.chi2_contingency(m, correction=False)
    return {"chi2": float(chi2), "dof": int(dof), "p_value": float(p)}


def _counts(cmds: np.ndarray, groups: np.ndarray, n_groups: int) -> np.ndarray:
    m = np.zeros((ALPHABET_SIZE, n_groups), dtype=np.int64)
    np.add.at(m, (cmds.astype(np.int64), groups.astype(np.int64)), 1)
    return m


def blindness_stats(table: RoundTable) -> dict:
    """Chi-square tests on what each server receives.

    ``other_role``: the server's command against whether the other server is
    computing or measuring. ``same_role``: the server's command across the two
    sub-protocols in which it has the same role. ``all_subprotocols``: the
    command against the sub-protocol label itself.
    """
    out = {}
    sub = table.sub
    for server in Server:
        cmds = table.plans.alice_cmd if server is Server.ALICE else table.plans.bob_cmd
        other_cmds = table.plans.bob_cmd if server is Server.ALICE else table.plans.alice_cmd
        other_computes = (other_cmds == 0).astype(np.int64)
        classes = {}
        for role, computes in (("compute", True), ("measure", False)):
            subs = [s for s in parties.SUBPROTOCOLS if s.computes(server) == computes]
            rows = np.isin(sub, [s.code for s in subs])
            grp = (sub[rows] == subs[1].code).astype(np.int64)
            classes[role] = {"subprotocols": [s.value for s in subs], **_chi2(_counts(cmds[rows], grp, 2))}
        out[server.value] = {
            "other_role": _chi2(_counts(cmds, other_computes, 2)),
            "same_role": classes,
            "all_subprotocols": _chi2(_counts(cmds, sub, 4)),
        }
    return out


@dataclass
class RunReport:
    chsh: dict
    tomography: dict
    computation: dict
    blindness: dict
    audit_clean: bool
    verdict: dict
    config: dict = field(default_factory=dict)

    @property
    def accepted(self) -> bool:
        return self.verdict["decision"] == verify.Decision.ACCEPT.value

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "RunReport":
        return cls(**d)

    @classmethod
    def from_json(cls, text: str) -> "RunReport":
        return cls.from_dict(json.loads(text))


def aggregate(
    table: RoundTable,
    mode: str = "frame-correct",
    strategies: Strategies | None = None,
    config: dict | None = None,
) -> RunReport:
    """Turn executed rounds into a report. ``strategies`` only feeds the theory columns."""
    ideal = theory(strategies, mode) if strategies is not None else {}

    tally = chsh_tally(table)
    win = _rate(tally.wins, tally.n)
    chsh = {
        "n": tally.n,
        "wins": tally.wins,
        "win_rate": win["rate"],
        "stderr": win["stderr"],
        "theory": ideal.get("chsh"),
    }
    if tally.n >= 2:
        v = verify.chsh_verdict(tally)
        chsh.update(
            epsilon=tally.epsilon,
            required_wins=tally.required_wins,
            estimated_epsilon=tally.estimated_epsilon,
            verdict=v.decision.value,
        )
    else:
        v = None
        chsh.update(epsilon=None, required_wins=None, estimated_epsilon=None, verdict=None)

    tomography = {}
    first_fail = None
    for sub, bases in verify.TOMOGRAPHY_BASES.items():
        entry = {}
        scored = 0
        for basis in bases:
            rows = _tomo_rows(table, sub, basis)
            ok = _tomo_pass(table, sub, basis, rows)
            scored += len(rows)
            r = _rate(int(ok.sum()), len(rows))
            entry[basis] = {
                "rounds": int(len(rows)),
                "passes": int(ok.sum()),
                "pass_rate": r["rate"],
                "stderr": r["stderr"],
                "theory": ideal.get((sub, basis)),
            }
            if (~ok).any():
                idx = int(table.round_index[rows[~ok]].min())
                first_fail = idx if first_fail is None else min(first_fail, idx)
        total = int(np.sum((table.sub == sub.code) & table.parity_success))
        entry["unscored"] = total - scored
        tomography[sub.value] = entry

    comp_rows = (table.sub == SubProtocol.COMPUTATION.code) & table.parity_success
    bits = computation_output_bits(table, mode)
    readout = [shor.postprocess(shor.PeriodReadout(b), shor.SHOR_15) for b in (0, 1)]
    succeeded = np.array([r.success for r in readout])[bits]
    factors = sorted({readout[b].factors for b in set(bits.tolist()) if readout[b].success})
    out_rate = _rate(int(bits.sum()), len(bits))
    attempts = table.parity_attempts[comp_rows]
    computation = {
        "rounds": int(comp_rows.sum()),
        "kept": int(len(bits)),
        "mode": mode,
        "output_one": int(bits.sum()),
        "output_one_rate": out_rate["rate"],
        "stderr": out_rate["stderr"],
        "success_rate": _rate(int(succeeded.sum()), len(bits))["rate"],
        "factors": [list(f) for f in factors],
        "mean_parity_attempts": float(attempts.mean()) if len(attempts) else None,
        "theory": ideal.get("output_one"),
    }

    if v is not None and not v.accepted:
        verdict = v
    elif first_fail is not None:
        verdict = verify.Verdict(verify.Decision.REJECT, verify.Cause.STABILIZER_MISMATCH, first_fail)
    else:
        verdict = verify.ACCEPT

    return RunReport(
        chsh=chsh,
        tomography=tomography,
        computation=computation,
        blindness=blindness_stats(table),
        audit_clean=bool(table.audit_ok.all()),
        verdict=verdict.to_dict(),
        config=dict(config or {}),
    )


# ---------------------------------------------------------------------------
# Files
# ---------------------------------------------------------------------------

CSV_FIELDS = ("section", "key", "theory", "simulated", "stderr", "rounds")


def report_rows(report: RunReport) -> list:
    rows = [
        {
            "section": "chsh",
            "key": "win_rate",
            "theory": report.chsh["theory"],
            "simulated": report.chsh["win_rate"],
            "stderr": report.chsh["stderr"],
            "rounds": report.chsh["n"],
        }
    ]
    for sub, entry in report.tomography.items():
        for basis, vals in entry.items():
            if basis == "unscored":
                continue
            rows.append(
                {
                    "section": sub,
                    "key": basis,
                    "theory": vals["theory"],
                    "simulated": vals["pass_rate"],
                    "stderr": vals["stderr"],
                    "rounds": vals["rounds"],
                }
            )
    c = report.computation
    rows.append(
        {
            "section": "computation",
            "key": "output_one_rate",
            "theory": c["theory"],
            "simulated": c["output_one_rate"],
            "stderr": c["stderr"],
            "rounds": c["kept"],
        }
    )
    return rows


def _csv_cell(v):
    return "" if v is None else repr(v) if isinstance(v, float) else str(v)


def _csv_value(field_name: str, text: str):
    if text == "":
        return None
    if field_name == "rounds":
        return int(text)
    if field_name in ("theory", "simulated", "stderr"):
        return float(text)
    return text


def write_csv(rows: Sequence[dict], path, fieldnames=CSV_FIELDS) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fieldnames, lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: _csv_cell(row.get(k)) for k in fieldnames})


def read_report_csv(path) -> list:
    with open(path, newline="") as fh:
        return [{k: _csv_value(k, v) for k, v in row.items()} for row in csv.DictReader(fh)]


def emit_report(report: RunReport, path, fmt: str = "structured-text") -> Path:
    """Write ``report`` as JSON ("structured-text") or a CSV table ("comma-separated")."""
    path = Path(path)
    try:
        if fmt == "structured-text":
            path.write_text(report.to_json())
        elif fmt == "comma-separated":
            write_csv(report_rows(report), path)
        else:
            raise ValueError(f"unknown report format {fmt!r}")
    except OSError as exc:
        raise OSError(f"cannot write report to {path}: {exc}") from exc
    return path


def load_report(path) -> RunReport:
    return RunReport.from_json(Path(path).read_text())


def write_transcripts(table: RoundTable, path) -> Path:
    path = Path(path)
    with open(path, "w") as fh:
        for t in table.transcripts():
            fh.write(t.to_json() + "\n")
    return path


def read_transcripts(path) -> RoundTable:
    with open(path) as fh:
        transcripts = [RoundTranscript.from_json(line) for line in fh if line.strip()]
    if not transcripts:
        raise ValueError(f"{path} holds no transcripts")
    return RoundTable.from_transcripts(transcripts)


# ---------------------------------------------------------------------------
# Sweeps
# ---------------------------------------------------------------------------

SWEEP_PARAMETERS = ("eta", "n_rounds", "werner_p", "offset")


def _with_value(base: RunConfig, parameter: str, value) -> RunConfig:
    try:
        if parameter == "eta":
            return replace(base, eta=float(value))
        if parameter == "n_rounds":
            if int(value) != value:
                raise ConfigError(f"n_rounds must be an integer, got {value}")
            return replace(base, n_rounds=int(value))
        if parameter == "werner_p":
            return replace(base, noise=replace(base.noise, werner_p=float(value)))
        if parameter == "offset":
            return replace(base, noise=replace(base.noise, bob_angle_offset=float(value)))
    except ValueError as exc:
        raise ConfigError(f"invalid {parameter} value {value!r}: {exc}") from None
    raise ConfigError(f"cannot sweep {parameter!r}; choose from {SWEEP_PARAMETERS}")


def sweep(parameter: str, grid: Iterable, base: RunConfig) -> list:
    """One report per grid value, every point run from the same base seed.

    ``offset`` is Bob's angle offset in radians.
    """
    grid = list(grid)
    if not grid:
        raise ConfigError("sweep grid is empty")
    configs = [_with_value(base, parameter, v) for v in grid]
    return [(v, run_experiment(c)) for v, c in zip(grid, configs)]


SWEEP_FIELDS = (
    "value",
    "chsh_rounds",
    "chsh_win_rate",
    "chsh_stderr",
    "epsilon",
    "chsh_verdict",
    "state_tomo_X1X2Z3",
    "state_tomo_Z1Z2Z3",
    "process_tomo_Z1X2X3",
    "process_tomo_Z1Z2Z3",
    "output_one_rate",
    "verdict",
)


def sweep_rows(results: Sequence) -> list:
    rows = []
    for value, r in results:
        st, pt = r.tomography["state-tomo"], r.tomography["process-tomo"]
        rows.append(
            {
                "value": value,
                "chsh_rounds": r.chsh["n"],
                "chsh_win_rate": r.chsh["win_rate"],
                "chsh_stderr": r.chsh["stderr"],
                "epsilon": r.chsh["epsilon"],
                "chsh_verdict": r.chsh["verdict"],
                "state_tomo_X1X2Z3": st["X1X2Z3"]["pass_rate"],
                "state_tomo_Z1Z2Z3": st["Z1Z2Z3"]["pass_rate"],
                "process_tomo_Z1X2X3": pt["Z1X2X3"]["pass_rate"],
                "process_tomo_Z1Z2Z3": pt["Z1Z2Z3"]["pass_rate"],
                "output_one_rate": r.computation["output_one_rate"],
                "verdict": r.verdict["decision"],
            }
        )
    return rows


def summary(report: RunReport) -> str:
    buf = io.StringIO()
    c = report.chsh
    if c["n"]:
        eps = "n/a" if c["epsilon"] is None else f"{c['epsilon']:.4f}"
        buf.write(f"CHSH         n={c['n']} win_rate={c['win_rate']:.4f}±{c['stderr']:.4f} eps={eps} -> {c['verdict']}\n")
    for sub, entry in report.tomography.items():
        for basis, vals in entry.items():
            if basis == "unscored" or not vals["rounds"]:
                continue
            buf.write(f"{sub:<13}{basis} pass={vals['pass_rate']:.3f}±{vals['stderr']:.3f} (n={vals['rounds']})\n")
    comp = report.computation
    if comp["kept"]:
        buf.write(
            f"computation P(out=1)={comp['output_one_rate']:.3f}±{comp['stderr']:.3f} "
            f"factors={comp['factors']} (n={comp['kept']}, {comp['mode']})\n"
        )
    buf.write(f"audit clean: {report.audit_clean}\n")
    v = report.verdict
    cause = "" if v["cause"] == "clean" else f" ({v['cause']}" + (f", round {v['round_index']})" if v["round_index"] is not None else ")")
    buf.write(f"verdict: {v['decision'].upper()}{cause}\n")
    return buf.getvalue()
