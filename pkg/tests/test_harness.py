import numpy as np
import pytest

from ctta import adapter as ad
from ctta.errors import CheckpointError, ConfigError
from ctta.harness import cli, runner
from ctta.harness.config import OUT_ROOT_ENV, RunConfig, load, loads
from ctta.metrics import read_config_hash
from ctta.nn import load_params
from ctta.stream import Stream


def small(tmp_path, **kw):
    base = dict(batches_per_domain=3, batch_size=32, seeds=(0,), out_dir=str(tmp_path), eval_size=300)
    return RunConfig().override(**{**base, **kw})


def test_ini_round_trip_and_hash():
    cfg = RunConfig().override(lambda_crp=50.0, seeds=(1, 2), mode="gradual")
    again = loads(cfg.to_ini())
    assert again == cfg
    assert again.hash() == cfg.hash()
    assert cfg.hash() != RunConfig().hash()
    assert cfg.hash("seed=1") != cfg.hash("seed=2")
    reordered = "[adapt]\nlambda_crp = 50.0\n\n[run]\nseeds = 1, 2\n\n[stream]\nmode = gradual\n"
    assert loads(reordered).hash() == cfg.hash()


@pytest.mark.parametrize(
    "text",
    [
        "[adapt]\nlambda = 3\n",
        "[extra]\nx = 1\n",
        "[adapt]\nlr = fast\n",
        "[adapt]\nmethod = magic\n",
        "[stream]\nmode = sideways\n",
        "not an ini",
    ],
)
def test_bad_configs_raise(text):
    with pytest.raises(ConfigError):
        loads(text)


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError):
        load(tmp_path / "nope.ini")


def test_out_root_env(tmp_path, monkeypatch):
    monkeypatch.setenv(OUT_ROOT_ENV, str(tmp_path / "elsewhere"))
    assert RunConfig().out_root() == tmp_path / "elsewhere"


def test_method_wiring():
    cfg = RunConfig()
    assert cfg.adaptation(0, "st_only").capacity == 0
    assert cfg.adaptation(0, "st_pce").lambda_crp == 0.0
    assert cfg.adaptation(0, "st_crp").use_pce is False
    assert cfg.adaptation(0, "full").lambda_crp == 200.0
    assert cfg.adaptation(4).seed == 4


def test_pretrain_reruns_are_byte_identical(tmp_path):
    cfg = small(tmp_path)
    path = runner.pretrain(cfg, 0)
    first = path.read_bytes()
    runner.pretrain(cfg, 0, force=True)
    assert path.read_bytes() == first
    params, arch, extra = load_params(path)
    assert float(extra["accuracy"]) >= cfg.source.floor
    assert arch.hidden == cfg.source.hidden


def test_run_outputs_carry_hash(tmp_path):
    cfg = small(tmp_path)
    r = runner.run_one(cfg, 0)
    for name in ("steps.csv", "summary.csv", "summary.txt", "probe.csv", "config.ini"):
        assert read_config_hash((r.run_dir / name).read_text()) == r.config_hash
    assert loads((r.run_dir / "config.ini").read_text()) == cfg
    lines = (r.run_dir / "steps.csv").read_text().splitlines()
    assert len(lines) == 2 + 8 * 3
    assert 0.0 <= r.mean_error <= 1.0


def test_rerun_and_resume_are_byte_identical(tmp_path):
    cfg = small(tmp_path, checkpoint_every=5)
    a = runner.run_one(cfg, 0, out=tmp_path / "a")
    b = runner.run_one(cfg, 0, out=tmp_path / "b")
    assert (a.run_dir / "steps.csv").read_bytes() == (b.run_dir / "steps.csv").read_bytes()

    # simulate a crash right after the step-10 checkpoint
    out = tmp_path / "c"
    out.mkdir()
    params, arch, graph = runner.load_source(cfg, 0)
    state = ad.init_state(params, arch, graph, cfg.adaptation(0))
    stream = Stream(cfg.stream.schedule(), runner._source_distribution(cfg, 0), 0)

    def save_once(st, prog):
        if st.step == 10:
            ad.save_checkpoint(out / "checkpoint.npz", st, prog, a.config_hash)

    ad.run_stream(state, stream, ad.RunProgress(), 10, save_once)

    c = runner.run_one(cfg, 0, resume=True, out=out)
    assert (c.run_dir / "steps.csv").read_bytes() == (a.run_dir / "steps.csv").read_bytes()
    assert (c.run_dir / "probe.csv").read_bytes() == (a.run_dir / "probe.csv").read_bytes()


def test_resume_rejects_foreign_checkpoint(tmp_path):
    cfg = small(tmp_path, checkpoint_every=5)
    a = runner.run_one(cfg, 0)
    other = cfg.override(lambda_crp=10.0)
    with pytest.raises(CheckpointError):
        runner.run_one(other, 0, resume=True, out=a.run_dir)


def test_report_refolds_steps(tmp_path):
    cfg = small(tmp_path)
    r = runner.run_one(cfg, 0)
    text = runner.report(tmp_path)
    assert r.config_hash in text
    assert "noise-a" in text
    with pytest.raises(CheckpointError):
        runner.report(tmp_path / "empty")


def test_cli_exit_codes(tmp_path, capsys):
    out = str(tmp_path)
    common = ["--out-dir", out, "--seeds", "0", "--batches-per-domain", "2", "--batch-size", "16", "--eval-size", "200"]
    assert cli.main(["run", *common]) == 0
    assert "full seed 0" in capsys.readouterr().out
    assert cli.main(["report", out]) == 0
    assert cli.main(["run", *common, "--lambda-crp", "abc"]) == ConfigError.exit_code
    assert cli.main(["run", "--config", str(tmp_path / "missing.ini")]) == ConfigError.exit_code
    assert cli.main(["report", str(tmp_path / "nothing")]) == CheckpointError.exit_code
    with pytest.raises(SystemExit):
        cli.main(["bogus"])


def test_ablate_writes_one_row_per_method(tmp_path):
    cfg = small(tmp_path)
    table = runner.ablate(cfg, ("st_only", "full"))
    rows = (tmp_path / "ablation.csv").read_text().splitlines()
    assert rows[0].startswith("# config_hash=")
    assert [r.split(",")[0] for r in rows[2:]] == ["st_only", "full"]
    assert set(table) == {"st_only", "full"}


def test_identity_stream_does_no_harm(tmp_path):
    seeds = (0, 1, 2, 3, 4)
    cfg = small(tmp_path, seeds=seeds, domains=(("clean", "identity"),), batches_per_domain=40, batch_size=64)
    full = runner.run_seeds(cfg)
    src = runner.run_seeds(cfg.with_method("source_only"))
    gap = np.array([f.mean_error - s.mean_error for f, s in zip(full, src)])
    assert np.all(gap < 0.02), gap
    assert abs(np.mean([r.forgetting for r in full])) < 0.02
