import json
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from segwithu import io
from segwithu.cli import main
from segwithu.head import HeadConfig, infer
from segwithu.io import FormatError, decode_tensor, encode_tensor, read_tensor, write_tensor
from segwithu.losses import LossWeights
from segwithu.synth import SynthConfig, generate_split
from segwithu.trainer import TrainConfig, collate, train_head
from segwithu.variants import GRIDS, LOSS_TERMS, VARIANTS, apply_variant, grid

SMALL_RUN = {
    "seed": 3,
    "synth": {"shape": [16, 16], "tap_channels": [6, 4]},
    "train": {"max_epochs": 2},
    "splits": {"train": 4, "val": 2, "test": 3},
}


def small_config(tmp_path):
    path = tmp_path / "run.json"
    path.write_text(json.dumps(SMALL_RUN))
    return str(path)


class TestTensorFile:
    def test_round_trip(self, tmp_path):
        a = np.random.default_rng(0).normal(size=(2, 3, 4, 5)).astype(np.float32)
        write_tensor(tmp_path / "a.swut", a)
        b = read_tensor(tmp_path / "a.swut")
        assert b.dtype == np.float32 and b.shape == a.shape and b.tobytes() == a.tobytes()

    @settings(max_examples=40, deadline=None)
    @given(st.lists(st.integers(1, 4), min_size=0, max_size=4), st.booleans(), st.integers(0, 1000))
    def test_round_trip_property(self, shape, integer, seed):
        rng = np.random.default_rng(seed)
        a = rng.integers(-50, 50, shape).astype(np.int32) if integer else rng.normal(size=shape).astype(np.float32)
        b = decode_tensor(encode_tensor(a))
        assert b.dtype == a.dtype and b.shape == a.shape and b.tobytes() == a.tobytes()

    def test_header_layout(self):
        blob = encode_tensor(np.zeros((2, 3), dtype=np.int32))
        assert blob[:4] == b"SWUT"
        assert struct.unpack("<HBB", blob[4:8]) == (1, 1, 2)
        assert struct.unpack("<2Q", blob[8:24]) == (2, 3)
        assert len(blob) == 24 + 24

    def test_rejections(self):
        good = encode_tensor(np.ones((2, 2), dtype=np.float32))
        bad = [b"XXXX" + good[4:], good[:-1], good + b"\0", good[:6],
               good[:4] + struct.pack("<H", 9) + good[6:],
               good[:6] + b"\x07" + good[7:]]
        for blob in bad:
            with pytest.raises(FormatError):
                decode_tensor(blob)

    def test_empty_extent_and_overflow(self):
        with pytest.raises(FormatError):
            encode_tensor(np.zeros((0, 3), dtype=np.float32))
        header = b"SWUT" + struct.pack("<HBB", 1, 0, 2) + struct.pack("<2Q", 2 ** 40, 2 ** 40)
        with pytest.raises(FormatError):
            decode_tensor(header)
        zero = b"SWUT" + struct.pack("<HBB", 1, 0, 1) + struct.pack("<Q", 0)
        with pytest.raises(FormatError):
            decode_tensor(zero)

    def test_unsupported_dtype(self):
        with pytest.raises(FormatError):
            encode_tensor(np.zeros(3, dtype=np.complex64))


class TestRunConfig:
    def test_defaults(self):
        synth, train, variant, splits, seed, out = io.parse_run_config({})
        assert train.lr_max == 1e-3 and train.lr_min == 3e-4 and train.clip_norm == 12
        assert train.betas == (0.9, 0.999) and train.eps == 1e-8
        assert variant == "full" and splits == {"train": 50, "val": 20, "test": 30}
        assert io.parse_run_config(io.default_run_config())[1] == train

    def test_unknown_keys(self):
        for doc in ({"bogus": 1}, {"synth": {"bogus": 1}}, {"train": {"weights": {"bogus": 1}}},
                    {"splits": {"holdout": 3}}, {"schema_version": 99}):
            with pytest.raises(FormatError):
                io.parse_run_config(doc)

    def test_seed_overrides(self):
        synth, train, *_ = io.parse_run_config({"seed": 9, "synth": {"seed": 1}})
        assert synth.seed == train.seed == 9

    def test_train_config_round_trip(self):
        cfg = TrainConfig(weights=LossWeights(pair=0.0), head=HeadConfig(num_probes=4))
        assert io.train_config_from_dict(json.loads(json.dumps(io.train_config_to_dict(cfg)))) == cfg

    def test_bad_json(self, tmp_path):
        (tmp_path / "c.json").write_text("{nope")
        with pytest.raises(FormatError):
            io.load_run_config(tmp_path / "c.json")


class TestCheckpoint:
    def test_infer_matches_in_process(self, tmp_path):
        cfg = SynthConfig(shape=(16, 16), tap_channels=(6, 4))
        train, val = generate_split(cfg, 3, "train"), generate_split(cfg, 2, "val")
        tcfg = TrainConfig(max_epochs=2)
        params, history = train_head(train, val, tcfg)
        io.save_checkpoint(tmp_path / "ck", params, tcfg, history)
        loaded, lcfg, lhist = io.load_checkpoint(tmp_path / "ck")
        assert lcfg == tcfg and lhist.best_epoch == history.best_epoch
        taps, z, _ = collate(val)
        a, b = infer(params, taps, z, tcfg.head), infer(loaded, taps, z, lcfg.head)
        for k, v in a.maps().items():
            np.testing.assert_array_equal(v, b.maps()[k])

    def test_cases_round_trip(self, tmp_path):
        cases = generate_split(SynthConfig(shape=(8, 8), tap_channels=(3, 2)), 2, "test")
        io.save_cases(tmp_path, cases)
        back = io.load_cases(tmp_path)
        assert [c.case_id for c in back] == [c.case_id for c in cases]
        for x, y in zip(cases, back):
            assert x.logits.tobytes() == y.logits.tobytes() and x.labels.tobytes() == y.labels.tobytes()

    def test_csv_nan(self, tmp_path):
        io.write_csv(tmp_path / "t.csv", ["a", "b"], [[1.5, float("nan")]])
        assert (tmp_path / "t.csv").read_text().splitlines()[1] == "1.5,"


class TestVariants:
    def test_every_variant_builds(self):
        base = TrainConfig()
        for name in VARIANTS:
            assert isinstance(apply_variant(name, base), TrainConfig)
        assert base == TrainConfig()

    def test_branch_variants(self):
        cal = apply_variant("calibration-only", TrainConfig())
        assert cal.weights.pair == cal.weights.ec == 0 and cal.weights.nll > 0
        rnk = apply_variant("ranking-only", TrainConfig())
        assert rnk.weights.nll == 0 and rnk.weights.pair > 0

    def test_loss_removal(self):
        for term in LOSS_TERMS:
            w = apply_variant(f"no-{term}", TrainConfig()).weights
            assert getattr(w, term) == 0
            assert all(getattr(w, t) > 0 for t in LOSS_TERMS if t != term)

    def test_knobs(self):
        assert apply_variant("probes-16", TrainConfig()).head.num_probes == 16
        assert apply_variant("gamma-2", TrainConfig()).head.gamma == 2.0

    def test_grids(self):
        assert all(n in VARIANTS for names in GRIDS.values() for n in names)
        with pytest.raises(KeyError):
            grid("nope")
        with pytest.raises(KeyError):
            apply_variant("nope", TrainConfig())


def _files(root):
    return {p.relative_to(root).as_posix(): p.read_bytes()
            for p in sorted(root.rglob("*")) if p.is_file() and p.suffix in {".csv", ".swut", ".json"}}


class TestCli:
    def test_pipeline(self, tmp_path):
        cfg = small_config(tmp_path)
        data, ck = tmp_path / "data", tmp_path / "ck"
        assert main(["synth", "--config", cfg, "--out", str(data)]) == 0
        assert len(list((data / "test").iterdir())) == 3
        assert main(["train", "--config", cfg, "--data", str(data), "--out", str(ck)]) == 0
        assert (ck / "history.csv").is_file()
        for method in ("segwithu-ranking", "entropy", "ts-entropy"):
            assert main(["eval", "--data", str(data), "--method", method, "--checkpoint", str(ck),
                         "--out", str(tmp_path / method)]) == 0
        rows = io.read_csv(tmp_path / "entropy" / "metrics.csv")
        assert len(rows) == 3
        assert main(["curves", "--data", str(data), "--method", "entropy", "--out", str(tmp_path / "cv")]) == 0
        kinds = {r["kind"] for r in io.read_csv(tmp_path / "cv" / "risk_coverage.csv")}
        assert kinds == {"method", "oracle", "random"}
        assert main(["infer", "--checkpoint", str(ck), "--data", str(data / "test"),
                     "--out", str(tmp_path / "maps")]) == 0
        case = sorted((tmp_path / "maps").iterdir())[0]
        assert read_tensor(case / "u_rnk.swut").shape == (1, 1, 16, 16)
        assert main(["compare", "--results", str(tmp_path / "entropy"), str(tmp_path / "ts-entropy"),
                     str(tmp_path / "segwithu-ranking"), "--out", str(tmp_path / "cmp")]) == 0
        assert (tmp_path / "cmp" / "column_sums.csv").is_file()

    def test_compare_identical_sets(self, tmp_path):
        cfg = small_config(tmp_path)
        data = tmp_path / "data"
        main(["synth", "--config", cfg, "--out", str(data)])
        for d in ("a", "b"):
            assert main(["eval", "--data", str(data), "--method", "entropy", "--out", str(tmp_path / d)]) == 0
        assert main(["compare", "--results", str(tmp_path / "a"), str(tmp_path / "b"),
                     "--out", str(tmp_path / "cmp")]) == 0
        for metric in ("dice", "brier", "auroc", "aurc"):
            rows = io.read_csv(tmp_path / "cmp" / f"pairwise_{metric}.csv")
            assert all(float(v) == 0 for r in rows for k, v in r.items() if k != "row")

    def test_exit_codes(self, tmp_path):
        assert main(["eval", "--data", str(tmp_path / "missing"), "--method", "entropy",
                     "--out", str(tmp_path / "o")]) == 2
        assert main(["bogus"]) == 1
        assert main([]) == 1
        assert main(["train", "--data", str(tmp_path), "--out", str(tmp_path), "--variant", "nope"]) == 1
        (tmp_path / "bad.json").write_text('{"bogus": 1}')
        assert main(["synth", "--config", str(tmp_path / "bad.json"), "--out", str(tmp_path / "d")]) == 2

    def test_numerical_failure_exit(self, tmp_path):
        cfg = small_config(tmp_path)
        data = tmp_path / "data"
        main(["synth", "--config", cfg, "--out", str(data)])
        case = sorted((data / "train").iterdir())[0]
        z = read_tensor(case / "logits.swut")
        z[0, 0, 0, 0] = np.nan
        write_tensor(case / "logits.swut", z)
        assert main(["train", "--config", cfg, "--data", str(data), "--out", str(tmp_path / "ck")]) == 3

    def test_help_lists_every_command(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["--help"])
        assert exc.value.code == 0
        text = capsys.readouterr().out
        for cmd in ("synth", "train", "infer", "eval", "compare", "curves", "ablate"):
            assert cmd in text

    def test_ablate(self, tmp_path):
        cfg = small_config(tmp_path)
        assert main(["ablate", "--config", cfg, "--grid", "taps", "--out", str(tmp_path / "ab")]) == 0
        rows = io.read_csv(tmp_path / "ab" / "summary.csv")
        assert [r["variant"] for r in rows] == ["full", "single-tap"]

    def test_byte_identical_reruns(self, tmp_path):
        cfg = small_config(tmp_path)
        outputs = []
        for run in ("r1", "r2"):
            root = tmp_path / run
            main(["synth", "--config", cfg, "--out", str(root / "data")])
            main(["train", "--config", cfg, "--data", str(root / "data"), "--out", str(root / "ck")])
            main(["eval", "--data", str(root / "data"), "--checkpoint", str(root / "ck"), "--out", str(root / "ev")])
            outputs.append(_files(root))
        assert outputs[0].keys() == outputs[1].keys() and outputs[0] == outputs[1]
