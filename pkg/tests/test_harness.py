import json
import math

import numpy as np
import pytest

from blindqc import harness, verify
from blindqc.harness import ConfigError, RunConfig
from blindqc.parties import SubProtocol
from blindqc.resources import NoiseModel

OMEGA = math.cos(math.pi / 8) ** 2


@pytest.fixture(scope="module")
def honest_table():
    return harness.simulate(40000, harness.SCENARIOS["honest"], NoiseModel(), seed=3)


class TestConfig:
    def test_defaults(self):
        c = RunConfig()
        assert (c.scenario, c.n_rounds, c.eta, c.mode) == ("honest", 24000, 0.25, "frame-correct")

    @pytest.mark.parametrize(
        "kw",
        [
            {"scenario": "nope"},
            {"n_rounds": 0},
            {"eta": 1.0},
            {"mode": "guess"},
            {"seed": -1},
            {"chunk_size": 0},
            {"scenario": "custom", "bob_strategy": "sneaky"},
        ],
    )
    def test_invalid(self, kw):
        with pytest.raises(ConfigError):
            RunConfig(**kw)

    def test_from_mapping_degrees(self):
        c = RunConfig.from_mapping({"bob_offset_deg": 20, "werner_p": 0.9})
        assert c.noise.bob_angle_offset == pytest.approx(math.radians(20))
        assert c.noise.werner_p == 0.9
        with pytest.raises(ConfigError):
            RunConfig.from_mapping({"bob_offset_deg": 1, "bob_angle_offset": 0.1})
        with pytest.raises(ConfigError):
            RunConfig.from_mapping({"colour": "blue"})
        with pytest.raises(ConfigError):
            RunConfig.from_mapping({"werner_p": 2})

    def test_from_file(self, tmp_path):
        p = tmp_path / "run.toml"
        p.write_text('scenario = "alice-x3"\nn_rounds = 1000\nseed = 9\nwerner_p = 0.95\n')
        c = RunConfig.from_file(p)
        assert c.scenario == "alice-x3" and c.n_rounds == 1000 and c.noise.werner_p == 0.95
        assert RunConfig.from_file(p, {"seed": 1}).seed == 1
        p.write_text("[section]\nseed = 1\n")
        with pytest.raises(ConfigError):
            RunConfig.from_file(p)
        p.write_text("seed = \n")
        with pytest.raises(ConfigError):
            RunConfig.from_file(p)

    def test_custom_strategies(self):
        c = RunConfig(scenario="custom", alice_strategy="flip-first-report")
        assert c.strategies.alice.honesty.value == "flip-first-report"


class TestSimulation:
    def test_same_seed_same_rounds(self):
        a = harness.simulate(3000, harness.SCENARIOS["honest"], NoiseModel(werner_p=0.9), seed=5, chunk_size=1000)
        b = harness.simulate(3000, harness.SCENARIOS["honest"], NoiseModel(werner_p=0.9), seed=5, chunk_size=1000)
        np.testing.assert_array_equal(a.alice_out, b.alice_out)
        np.testing.assert_array_equal(a.bob_out, b.bob_out)
        np.testing.assert_array_equal(a.plans.bob_cmd, b.plans.bob_cmd)
        np.testing.assert_array_equal(a.round_index, np.arange(3000))

    def test_different_seed_differs(self):
        a = harness.simulate(500, harness.SCENARIOS["honest"], NoiseModel(), seed=1)
        b = harness.simulate(500, harness.SCENARIOS["honest"], NoiseModel(), seed=2)
        assert not np.array_equal(a.bob_out, b.bob_out)

    def test_forced_subprotocol(self):
        t = harness.simulate(200, harness.SCENARIOS["honest"], NoiseModel(), seed=1, sub=SubProtocol.CHSH)
        assert np.all(t.sub == SubProtocol.CHSH.code)

    def test_eta_sets_computation_share(self):
        t = harness.simulate(20000, harness.SCENARIOS["honest"], NoiseModel(), seed=1, eta=0.6)
        assert np.mean(t.sub == 0) == pytest.approx(0.6, abs=0.015)

    def test_parity_always_resolved(self, honest_table):
        assert honest_table.parity_success.all()
        comp = honest_table.sub == 0
        assert honest_table.parity_attempts[comp].mean() == pytest.approx(2.0, abs=0.05)


class TestTheory:
    def test_honest(self):
        t = harness.theory(harness.SCENARIOS["honest"])
        assert t["chsh"] == pytest.approx(OMEGA, abs=1e-12)
        assert all(t[(s, b)] == pytest.approx(1.0) for s, bs in verify.TOMOGRAPHY_BASES.items() for b in bs)
        assert t["output_one"] == pytest.approx(0.5)

    def test_offset(self):
        # one side tilted by delta: win = 1/2 + cos(delta) / (2 sqrt 2)
        t = harness.theory(harness.SCENARIOS["chsh-dishonest-offset"])
        assert t["chsh"] == pytest.approx(0.5 + math.cos(math.radians(20)) / (2 * math.sqrt(2)), abs=1e-12)

    @pytest.mark.parametrize(
        "scenario,sub,expect",
        [
            ("alice-flip-report", SubProtocol.STATE_TOMO, (0.0, 1.0)),
            ("alice-x3", SubProtocol.STATE_TOMO, (0.5, 0.5)),
            ("bob-z2z3", SubProtocol.PROCESS_TOMO, (0.5, 1.0)),
            ("bob-q1-swap", SubProtocol.PROCESS_TOMO, (0.5, 0.5)),
        ],
    )
    def test_cheats(self, scenario, sub, expect):
        t = harness.theory(harness.SCENARIOS[scenario])
        got = tuple(t[(sub, b)] for b in verify.TOMOGRAPHY_BASES[sub])
        assert got == pytest.approx(expect, abs=1e-12)

    def test_modes_agree(self):
        s = harness.SCENARIOS["honest"]
        assert harness.theory(s, "postselect")["output_one"] == pytest.approx(harness.theory(s)["output_one"])


class TestAggregate:
    def test_honest_accepts(self, honest_table):
        r = harness.aggregate(honest_table, strategies=harness.SCENARIOS["honest"])
        assert r.accepted and r.audit_clean
        assert r.chsh["win_rate"] == pytest.approx(OMEGA, abs=4 * r.chsh["stderr"])
        assert r.computation["factors"] == [[3, 5]]
        assert r.computation["output_one_rate"] == pytest.approx(0.5, abs=0.02)
        assert r.computation["success_rate"] == pytest.approx(r.computation["output_one_rate"])
        for entry in r.tomography.values():
            assert entry["unscored"] > 0
            assert all(v["pass_rate"] == 1.0 for k, v in entry.items() if k != "unscored")

    def test_first_mismatch_reported(self):
        cfg = RunConfig(scenario="alice-x3", n_rounds=3000, seed=4)
        table = harness.run_table(cfg)
        r = harness.aggregate(table, strategies=cfg.strategies)
        assert r.verdict["decision"] == "reject" and r.verdict["cause"] == "stabilizer-mismatch"
        failing = [
            t.round_index
            for t in table.transcripts()
            if t.plan.tomography_basis is not None and not verify.check_round(t)
        ]
        assert r.verdict["round_index"] == min(failing)

    def test_chsh_reject_takes_precedence(self):
        r = harness.run_experiment(RunConfig(scenario="bob-q1-swap", n_rounds=8000, seed=1))
        assert r.verdict["cause"] == "chsh-below-threshold"

    def test_postselect_keeps_an_eighth(self, honest_table):
        r = harness.aggregate(honest_table, mode="postselect")
        assert r.computation["kept"] / r.computation["rounds"] == pytest.approx(1 / 8, abs=0.01)

    def test_empty_chsh(self):
        t = harness.simulate(50, harness.SCENARIOS["honest"], NoiseModel(), seed=1, sub=SubProtocol.COMPUTATION)
        r = harness.aggregate(t)
        assert r.chsh["n"] == 0 and r.chsh["verdict"] is None and r.accepted
        assert "CHSH" not in harness.summary(r)


class TestBlindness:
    @pytest.mark.parametrize("server", ["alice", "bob"])
    def test_achievable_indistinguishability(self, honest_table, server):
        b = harness.blindness_stats(honest_table)[server]
        assert b["other_role"]["p_value"] > 0.01
        assert b["same_role"]["measure"]["p_value"] > 0.01
        assert b["same_role"]["compute"]["dof"] == 0

    def test_compute_command_only_when_computing(self, honest_table):
        t = honest_table
        for server, cmd in (("alice", t.plans.alice_cmd), ("bob", t.plans.bob_cmd)):
            computes = np.isin(t.sub, [s.code for s in SubProtocol if s.computes(harness.Server(server))])
            np.testing.assert_array_equal(cmd == 0, computes)

    @pytest.mark.parametrize("scenario", sorted(harness.SCENARIOS))
    def test_audit_clean(self, scenario):
        t = harness.simulate(2000, harness.SCENARIOS[scenario], NoiseModel(), seed=2)
        assert t.audit_ok.all()
        assert all("VIOLATION" not in e for log in t.audit_logs.values() for e in log)


class TestFiles:
    def test_report_json_round_trip(self, tmp_path, honest_table):
        r = harness.aggregate(honest_table, strategies=harness.SCENARIOS["honest"], config={"seed": 3})
        path = harness.emit_report(r, tmp_path / "r.json")
        again = harness.load_report(path)
        assert again.to_dict() == json.loads(r.to_json())
        assert again.accepted == r.accepted

    def test_report_csv_round_trip(self, tmp_path, honest_table):
        r = harness.aggregate(honest_table, strategies=harness.SCENARIOS["honest"])
        path = harness.emit_report(r, tmp_path / "r.csv", "comma-separated")
        rows = harness.read_report_csv(path)
        assert rows == harness.report_rows(r)
        assert rows[0]["section"] == "chsh" and rows[0]["theory"] == pytest.approx(OMEGA)

    def test_bad_format_and_path(self, tmp_path, honest_table):
        r = harness.aggregate(honest_table)
        with pytest.raises(ValueError):
            harness.emit_report(r, tmp_path / "x", "yaml")
        with pytest.raises(OSError):
            harness.emit_report(r, tmp_path / "missing" / "r.json")

    def test_transcripts_reproduce_report(self, tmp_path):
        cfg = RunConfig(scenario="bob-z2z3", n_rounds=1500, seed=8)
        table = harness.run_table(cfg)
        path = harness.write_transcripts(table, tmp_path / "t.jsonl")
        lines = path.read_text().splitlines()
        assert len(lines) == 1500
        back = harness.read_transcripts(path)
        r1 = harness.aggregate(table, strategies=cfg.strategies)
        r2 = harness.aggregate(back, strategies=cfg.strategies)
        assert r1.to_dict() == r2.to_dict()

    def test_empty_transcripts(self, tmp_path):
        p = tmp_path / "t.jsonl"
        p.write_text("")
        with pytest.raises(ValueError):
            harness.read_transcripts(p)


class TestSweep:
    def test_werner_sweep_is_monotone(self):
        base = RunConfig(n_rounds=12000, seed=2)
        grid = [1.0, 0.95, 0.9, 0.85, 0.8]
        rows = harness.sweep_rows(harness.sweep("werner_p", grid, base))
        rates = [r["chsh_win_rate"] for r in rows]
        assert all(a >= b for a, b in zip(rates, rates[1:]))
        tomo = [r["state_tomo_X1X2Z3"] for r in rows]
        assert all(a >= b for a, b in zip(tomo, tomo[1:]))
        assert rows[0]["verdict"] == "accept" and rows[-1]["verdict"] == "reject"

    def test_offset_sweep(self, tmp_path):
        base = RunConfig(n_rounds=12000, seed=2)
        results = harness.sweep("offset", [0.0, math.radians(20), math.radians(40)], base)
        rates = [r.chsh["win_rate"] for _, r in results]
        assert rates[0] > rates[1] > rates[2]
        assert results[0][1].config["noise"]["bob_angle_offset"] == 0.0
        harness.write_csv(harness.sweep_rows(results), tmp_path / "s.csv", harness.SWEEP_FIELDS)
        assert (tmp_path / "s.csv").read_text().splitlines()[0].startswith("value,chsh_rounds")

    def test_bad_sweeps(self):
        with pytest.raises(ConfigError):
            harness.sweep("colour", [1], RunConfig())
        with pytest.raises(ConfigError):
            harness.sweep("eta", [], RunConfig())
        with pytest.raises(ConfigError):
            harness.sweep("werner_p", [1.5], RunConfig(n_rounds=10))
        with pytest.raises(ConfigError):
            harness.sweep("n_rounds", [10.5], RunConfig())


class TestReferenceCases:
    def test_pauli_frame_output_independent_of_alice_pattern(self):
        from scipy import stats

        t = harness.simulate(20000, harness.SCENARIOS["honest"], NoiseModel(), seed=21, sub=SubProtocol.COMPUTATION)
        bits = harness.computation_output_bits(t)
        cls = 2 * (t.alice_out[:, 0] * t.alice_out[:, 1] == -1) + (t.alice_out[:, 2] == -1)
        table = np.zeros((2, 4))
        np.add.at(table, (bits, cls), 1)
        assert stats.chi2_contingency(table)[1] > 0.01

    def test_identical_config_gives_identical_report(self, tmp_path):
        cfg = RunConfig(n_rounds=3000, seed=17, noise=NoiseModel(werner_p=0.93))
        a = harness.emit_report(harness.run_experiment(cfg), tmp_path / "a.json")
        b = harness.emit_report(harness.run_experiment(cfg), tmp_path / "b.json")
        assert a.read_bytes() == b.read_bytes()

    def test_dishonest_offset_win_rate(self):
        r = harness.run_experiment(RunConfig(scenario="chsh-dishonest-offset", n_rounds=24000, seed=31))
        assert 5500 < r.chsh["n"] < 6500
        assert abs(r.chsh["win_rate"] - 0.8322) <= 3 * r.chsh["stderr"]

    def test_report_theory_columns(self):
        for name, want in (("honest", (1.0, 1.0)), ("alice-flip-report", (0.0, 1.0))):
            rows = harness.report_rows(harness.run_experiment(RunConfig(scenario=name, n_rounds=1000, seed=1)))
            got = tuple(r["theory"] for r in rows if r["section"] == "state-tomo")
            assert got == pytest.approx(want)
            assert [r["key"] for r in rows if r["section"] == "state-tomo"] == ["X1X2Z3", "Z1Z2Z3"]

    def test_offset_sweep_strictly_decreasing(self):
        results = harness.sweep("offset", [math.radians(d) for d in (0, 10, 20)], RunConfig(n_rounds=24000, seed=5))
        rates = [r.chsh["win_rate"] for _, r in results]
        assert rates[0] > rates[1] > rates[2]

    def test_n_rounds_sweep_epsilon_decreasing(self):
        rows = harness.sweep_rows(harness.sweep("n_rounds", [100, 1000, 10000], RunConfig(seed=5)))
        eps = [r["epsilon"] for r in rows]
        assert eps[0] > eps[1] > eps[2]

    def test_werner_sweep_state_tomo_strictly_decreasing(self):
        rows = harness.sweep_rows(harness.sweep("werner_p", [1.0, 0.95, 0.9], RunConfig(n_rounds=24000, seed=5)))
        for key in ("state_tomo_X1X2Z3", "state_tomo_Z1Z2Z3"):
            vals = [r[key] for r in rows]
            assert vals[0] > vals[1] > vals[2]
