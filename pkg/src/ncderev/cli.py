"""Batch command-line entry points.

Subcommands: make-corpus, fit-fir, sweep-context, featurize, train-mlp,
derev, mix-sweep, diagnose. Common flags: --config (JSON), --seed,
--workdir, --jobs; explicit flags override the config file, which
overrides built-in defaults.

Every command is deterministic given config + seed (no wall-clock
seeding) and writes a reproducibility record to workdir/runs/. Exit
codes: 0 success, 2 config error, 3 data error, 4 numerical failure.
"""

import argparse
import json
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, corpus, diagnostics, dsp, features, fileformats, fir, mixing, mlp, rir


class ConfigError(ValueError):
    """Bad or inconsistent configuration."""


class DataError(RuntimeError):
    """Missing or malformed input data or upstream artifacts."""


@dataclass
class ExperimentConfig:
    """Resolved settings shared by all subcommands."""

    workdir: str = "work"
    clean_dir: str = ""
    seed: int = 0
    jobs: int = 1
    sample_rate: int = 16000
    nominal_dims: list = field(default_factory=lambda: [7.95, 5.68, 4.5])
    rt60_range: list = field(default_factory=lambda: [0.4, 1.99])
    rir_count: int = 0  # 0 means one RIR per utterance
    absorption_mode: str = "eyring"
    frame_ms: float = 25.0
    shift_ms: float = 10.0
    fft_size: int = 512
    n_mels: int = 40
    p: int = 10
    q: int = 10
    ridge: object = "auto"
    context_grid: list = field(default_factory=lambda: [
        [0, 0], [1, 1], [2, 2], [5, 5], [10, 10], [0, 20], [20, 0],
    ])
    split: str = "test"
    limit: int = 0  # 0 means no cap on utterances
    hidden_width: int = 128
    hidden_layers: int = 3
    learning_rate: float = 1.0
    batch_size: int = 64
    epochs: int = 100
    improvement_threshold: float = 0.0
    max_halvings: int = 5
    enhancer: str = "causal-fir"
    enhancer_p: int = 10
    lambda_grid: list = field(default_factory=lambda: [
        round(0.05 * i, 2) for i in range(21)
    ])
    mix_configs: list = field(default_factory=lambda: [1, 2, 3, 4])
    n_subsets: int = 2
    streams_dir: str = ""
    max_lag: int = 100
    tail_from_lag: int = 10
    autocorr_magnitude: bool = True  # magnitude trajectories expose smearing

    def __post_init__(self):
        if self.seed is None:
            raise ConfigError("a seed is required; wall-clock seeding is not allowed")
        if self.enhancer not in mixing.ENHANCERS:
            raise ConfigError(
                f"unknown enhancer {self.enhancer!r}; registered: {mixing.ENHANCERS}"
            )
        if self.split not in ("train", "dev", "test", "all"):
            raise ConfigError(f"split must be train/dev/test/all, got {self.split!r}")
        if self.ridge != "auto":
            try:
                self.ridge = float(self.ridge)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"ridge must be a number or 'auto': {exc}") from exc


def resolve_config(args) -> ExperimentConfig:
    """Defaults, then config file, then explicit command-line flags."""
    values = {}
    if args.config:
        path = Path(args.config)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        try:
            loaded = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
        if not isinstance(loaded, dict):
            raise ConfigError(f"config file {path} must hold a JSON object")
        known = set(ExperimentConfig.__dataclass_fields__)
        unknown = set(loaded) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        values.update(loaded)
    for key in ExperimentConfig.__dataclass_fields__:
        flag = getattr(args, key, None)
        if flag is not None:
            values[key] = flag
    try:
        return ExperimentConfig(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def _workdir(cfg) -> Path:
    path = Path(cfg.workdir)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _write_run_record(cfg, command) -> None:
    runs = _workdir(cfg) / "runs"
    runs.mkdir(exist_ok=True)
    record = {
        "command": command,
        "config": asdict(cfg),
        "seed": cfg.seed,
        "version": __version__,
    }
    (runs / f"{command}.json").write_text(
        json.dumps(record, indent=1, sort_keys=True) + "\n"
    )


def _stft_config(cfg) -> dsp.StftConfig:
    return dsp.StftConfig.for_sample_rate(
        cfg.sample_rate, cfg.frame_ms, cfg.shift_ms, cfg.fft_size
    )


def _manifest_rows(cfg, split=None):
    rows = corpus.read_manifest(_workdir(cfg) / "manifest.csv")
    if split and split != "all":
        rows = [r for r in rows if r.split == split]
        if not rows:
            raise DataError(f"no utterances in split {split!r}")
    if cfg.limit:
        rows = rows[:cfg.limit]
    return rows


def _load_pair(cfg, row):
    """(reverb, clean) spectrograms for one manifest row."""
    workdir = _workdir(cfg)
    config = _stft_config(cfg)
    clean = dsp.stft(dsp.read_wav(row.clean_path), config)
    reverb = dsp.stft(dsp.read_wav(workdir / row.reverb_path), config)
    return reverb, clean


def _features_path(cfg, kind, utt) -> Path:
    return _workdir(cfg) / "features" / kind / f"{utt}.ncft"


def _require_features(cfg, kind, utt) -> np.ndarray:
    path = _features_path(cfg, kind, utt)
    if not path.is_file():
        raise DataError(f"missing upstream artifact {path}; run featurize first")
    return fileformats.read_features(path)


def _mvn_logmel(spec, bank) -> np.ndarray:
    return features.mvn(features.log_mel(spec, bank))


def cmd_make_corpus(cfg) -> int:
    if not cfg.clean_dir:
        raise ConfigError("make-corpus needs clean_dir (or --clean-dir)")
    pairs = corpus.scan_clean_dir(cfg.clean_dir)
    workdir = _workdir(cfg)
    rows = corpus.build_corpus(
        pairs, workdir, cfg.seed,
        nominal_dims=tuple(cfg.nominal_dims),
        rt60_range=tuple(cfg.rt60_range),
        sample_rate=cfg.sample_rate,
        rir_count=cfg.rir_count or None,
        absorption_mode=cfg.absorption_mode,
        jobs=cfg.jobs,
    )
    corpus.write_manifest(rows, workdir / "manifest.csv")
    _write_run_record(cfg, "make-corpus")
    print(f"wrote {workdir / 'manifest.csv'} ({len(rows)} utterances)")
    return 0


def cmd_featurize(cfg) -> int:
    workdir = _workdir(cfg)
    rows = _manifest_rows(cfg)
    stft_config = _stft_config(cfg)
    bank = features.mel_bank(stft_config.fft_size, cfg.sample_rate, cfg.n_mels)
    for kind in ("clean", "reverb"):
        (workdir / "features" / kind).mkdir(parents=True, exist_ok=True)
    for row in rows:
        reverb_spec, clean_spec = _load_pair(cfg, row)
        clean_feats = _mvn_logmel(clean_spec, bank)
        reverb_feats = _mvn_logmel(reverb_spec, bank)
        reverb_feats, clean_feats = features.align_pairs(reverb_feats, clean_feats)
        fileformats.write_features(clean_feats, _features_path(cfg, "clean", row.utterance))
        fileformats.write_features(reverb_feats, _features_path(cfg, "reverb", row.utterance))
    _write_run_record(cfg, "featurize")
    print(f"wrote features for {len(rows)} utterances under {workdir / 'features'}")
    return 0


def cmd_fit_fir(cfg) -> int:
    workdir = _workdir(cfg)
    rows = _manifest_rows(cfg, cfg.split)
    out_dir = workdir / "fir"
    out_dir.mkdir(exist_ok=True)
    err_rows = []
    for row in rows:
        reverb_spec, clean_spec = _load_pair(cfg, row)
        estimate, filters, errors = fir.dereverberate_spectrogram(
            reverb_spec, clean_spec, cfg.p, cfg.q, ridge=cfg.ridge
        )
        fileformats.write_filters_csv(filters, out_dir / f"{row.utterance}_filters.csv")
        fileformats.write_spectrogram(estimate, out_dir / f"{row.utterance}_estimate.ncsp")
        dsp.write_wav(dsp.istft(estimate), out_dir / f"{row.utterance}_estimate.wav")
        denom = float(np.sum(np.abs(clean_spec.values) ** 2))
        err_rows.append((row.utterance, float(errors.sum()),
                         float(errors.sum()) / denom if denom else 0.0))
    fileformats.write_csv(out_dir / "errors.csv",
                          ["utterance", "total_err", "normalized_err"], err_rows)
    _write_run_record(cfg, "fit-fir")
    print(f"wrote per-bin filters for {len(rows)} utterances under {out_dir}")
    return 0


def cmd_sweep_context(cfg) -> int:
    workdir = _workdir(cfg)
    rows = _manifest_rows(cfg, cfg.split)
    pairs = [_load_pair(cfg, row) for row in rows]
    grid = [tuple(int(v) for v in cell) for cell in cfg.context_grid]
    sweep_rows = fir.context_sweep(pairs, grid, ridge=cfg.ridge)
    out = workdir / "context_sweep.csv"
    fileformats.write_sweep_csv(sweep_rows, out)
    _write_run_record(cfg, "sweep-context")
    print(f"wrote {out} ({len(sweep_rows)} grid cells x {len(pairs)} utterances)")
    return 0


def _dataset_from_rows(cfg, rows):
    inputs = []
    targets = []
    for row in rows:
        reverb_feats = _require_features(cfg, "reverb", row.utterance)
        clean_feats = _require_features(cfg, "clean", row.utterance)
        inputs.append(features.stack_context(reverb_feats, cfg.p, cfg.q))
        targets.append(clean_feats)
    return np.concatenate(inputs), np.concatenate(targets)


def cmd_train_mlp(cfg) -> int:
    workdir = _workdir(cfg)
    train_rows = _manifest_rows(cfg, "train")
    train_x, train_y = _dataset_from_rows(cfg, train_rows)
    try:
        dev_rows = _manifest_rows(cfg, "dev")
        valid_x, valid_y = _dataset_from_rows(cfg, dev_rows)
    except DataError:
        valid_x = valid_y = None
    dims = ([(cfg.p + cfg.q + 1) * cfg.n_mels]
            + [cfg.hidden_width] * cfg.hidden_layers + [cfg.n_mels])
    model = mlp.init_model(dims, cfg.seed)
    config = mlp.TrainConfig(
        learning_rate=cfg.learning_rate, batch_size=cfg.batch_size,
        epochs=cfg.epochs, improvement_threshold=cfg.improvement_threshold,
        max_halvings=cfg.max_halvings, seed=cfg.seed,
    )
    best, trace = mlp.train(model, train_x, train_y, config, valid_x, valid_y)
    mlp.save_model(best, workdir / "mlp_model.json", seed=cfg.seed)
    fileformats.write_csv(
        workdir / "mlp_loss.csv",
        ["epoch", "train_mse", "valid_mse", "learning_rate"],
        trace,
    )
    _write_run_record(cfg, "train-mlp")
    print(f"trained on {train_x.shape[0]} frames; wrote {workdir / 'mlp_model.json'}")
    return 0


def _load_model(cfg) -> mlp.MlpModel:
    path = _workdir(cfg) / "mlp_model.json"
    if not path.is_file():
        raise DataError(f"missing upstream artifact {path}; run train-mlp first")
    return mlp.load_model(path)


def cmd_derev(cfg) -> int:
    workdir = _workdir(cfg)
    model = _load_model(cfg)
    rows = _manifest_rows(cfg, cfg.split)
    out_dir = workdir / "features" / "derev"
    out_dir.mkdir(parents=True, exist_ok=True)
    enhanced_pairs = []
    baseline_pairs = []
    for row in rows:
        reverb_feats = _require_features(cfg, "reverb", row.utterance)
        clean_feats = _require_features(cfg, "clean", row.utterance)
        estimate = mlp.dereverberate_features(model, reverb_feats, cfg.p, cfg.q)
        fileformats.write_features(estimate, out_dir / f"{row.utterance}.ncft")
        enhanced_pairs.append((row.utterance, estimate, clean_feats))
        baseline_pairs.append((row.utterance, reverb_feats, clean_feats))
    derev_rows, derev_mean = diagnostics.mse_report(enhanced_pairs)
    base_rows, base_mean = diagnostics.mse_report(baseline_pairs)
    fileformats.write_csv(workdir / "derev_mse.csv",
                          ["utterance", "n_frames", "mse"], derev_rows)
    fileformats.write_csv(workdir / "reverb_mse.csv",
                          ["utterance", "n_frames", "mse"], base_rows)
    _write_run_record(cfg, "derev")
    print(f"corpus MSE: derev {derev_mean!r} vs reverb {base_mean!r} "
          f"({len(rows)} utterances)")
    return 0


def _fit_enhancer(cfg):
    if cfg.enhancer == "identity":
        return None
    train_rows = _manifest_rows(cfg, "train")
    pairs = [_load_pair(cfg, row) for row in train_rows]
    return mixing.CausalFirEnhancer(p=cfg.enhancer_p, ridge=cfg.ridge).fit(pairs)


def _stream_override(cfg, utt, name):
    if not cfg.streams_dir:
        return None
    path = Path(cfg.streams_dir) / f"{utt}__{name}.ncft"
    return fileformats.read_features(path) if path.is_file() else None


def cmd_mix_sweep(cfg) -> int:
    workdir = _workdir(cfg)
    model = _load_model(cfg)
    rows = _manifest_rows(cfg, "dev")
    stft_config = _stft_config(cfg)
    bank = features.mel_bank(stft_config.fft_size, cfg.sample_rate, cfg.n_mels)
    enhancer = _fit_enhancer(cfg)

    utterances = []
    for row in rows:
        clean_feats = _require_features(cfg, "clean", row.utterance)
        n_frames = clean_feats.shape[0]
        streams = {}
        override = _stream_override(cfg, row.utterance, "reverb")
        streams["reverb"] = (override if override is not None
                             else _require_features(cfg, "reverb", row.utterance))
        ref = _stream_override(cfg, row.utterance, "ref_enhanced")
        if ref is None:
            reverb_spec, _ = _load_pair(cfg, row)
            enhanced_spec = mixing.apply_enhancer(cfg.enhancer, reverb_spec, enhancer)
            ref = _mvn_logmel(enhanced_spec, bank)[:n_frames]
        streams["ref_enhanced"] = ref
        dv = _stream_override(cfg, row.utterance, "derev_of_reverb")
        if dv is None:
            dv = mlp.dereverberate_features(model, streams["reverb"], cfg.p, cfg.q)
        streams["derev_of_reverb"] = dv
        dve = _stream_override(cfg, row.utterance, "derev_of_ref_enhanced")
        if dve is None:
            dve = mlp.dereverberate_features(model, streams["ref_enhanced"], cfg.p, cfg.q)
        streams["derev_of_ref_enhanced"] = dve
        utterances.append((row, streams, clean_feats))

    rt60s = [row.rt60 for row, _, _ in utterances]
    edges = np.linspace(min(rt60s), max(rt60s), cfg.n_subsets + 1)
    subsets = {}
    for j in range(cfg.n_subsets):
        name = f"rt60_band{j}"
        members = [
            (streams, clean) for row, streams, clean in utterances
            if (edges[j] <= row.rt60 <= edges[j + 1] if j == cfg.n_subsets - 1
                else edges[j] <= row.rt60 < edges[j + 1])
        ]
        if members:
            subsets[name] = members

    cell_rows = []
    summary_rows = []
    for config_id in cfg.mix_configs:
        per_subset, average, cells = mixing.lambda_sweep(
            subsets, cfg.lambda_grid, config_id
        )
        cell_rows.extend((c.subset, c.config_id, c.lam, c.mse) for c in cells)
        summary_rows.extend(
            (config_id, name, per_subset[name]) for name in sorted(per_subset)
        )
        summary_rows.append((config_id, "average", average))
    fileformats.write_csv(workdir / "mix_sweep.csv",
                          ["subset", "config", "lambda", "mse"], cell_rows)
    fileformats.write_csv(workdir / "mix_summary.csv",
                          ["config", "subset", "optimal_lambda"], summary_rows)
    _write_run_record(cfg, "mix-sweep")
    print(f"wrote {workdir / 'mix_sweep.csv'} ({len(cell_rows)} cells)")
    return 0


def cmd_diagnose(cfg) -> int:
    workdir = _workdir(cfg)
    rows = _manifest_rows(cfg, cfg.split)
    out_dir = workdir / "diagnostics"
    out_dir.mkdir(exist_ok=True)
    clean_specs = []
    reverb_specs = []
    derev_specs = []
    for row in rows:
        reverb_spec, clean_spec = _load_pair(cfg, row)
        estimate, _, _ = fir.dereverberate_spectrogram(
            reverb_spec, clean_spec, cfg.p, cfg.q, ridge=cfg.ridge
        )
        clean_specs.append(clean_spec)
        reverb_specs.append(reverb_spec)
        derev_specs.append(estimate)
    curves = {}
    skipped = {}
    for name, specs in (("clean", clean_specs), ("reverb", reverb_specs),
                        ("fir_derev", derev_specs)):
        curves[name], skipped[name] = diagnostics.average_autocorr(
            specs, cfg.max_lag, magnitude=cfg.autocorr_magnitude)
    fileformats.write_csv(
        out_dir / "autocorr_curves.csv",
        ["lag", "clean", "reverb", "fir_derev"],
        ((int(lag), curves["clean"].values[i], curves["reverb"].values[i],
          curves["fir_derev"].values[i])
         for i, lag in enumerate(curves["clean"].lags)),
    )
    fileformats.write_csv(
        out_dir / "tail_mass.csv",
        ["corpus", "from_lag", "tail_mass", "skipped_trajectories"],
        ((name, cfg.tail_from_lag,
          diagnostics.tail_mass(curves[name], cfg.tail_from_lag), skipped[name])
         for name in ("clean", "reverb", "fir_derev")),
    )
    bank = features.mel_bank(_stft_config(cfg).fft_size, cfg.sample_rate, cfg.n_mels)
    first = rows[0].utterance
    for name, spec in (("clean", clean_specs[0]), ("reverb", reverb_specs[0]),
                       ("fir_derev", derev_specs[0])):
        diagnostics.export_spectrogram(spec, out_dir / f"{first}_{name}.pgm", "pgm")
        diagnostics.export_spectrogram(
            features.mvn(features.log_mel(spec, bank)),
            out_dir / f"{first}_{name}_logmel.csv", "csv",
        )
    _write_run_record(cfg, "diagnose")
    print(f"wrote diagnostics for {len(rows)} utterances under {out_dir}")
    return 0


COMMANDS = {
    "make-corpus": cmd_make_corpus,
    "featurize": cmd_featurize,
    "fit-fir": cmd_fit_fir,
    "sweep-context": cmd_sweep_context,
    "train-mlp": cmd_train_mlp,
    "derev": cmd_derev,
    "mix-sweep": cmd_mix_sweep,
    "diagnose": cmd_diagnose,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ncderev",
        description="Batch speech dereverberation experiments on synthetic corpora",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        cmd = sub.add_parser(name)
        cmd.add_argument("--config", help="JSON config file")
        cmd.add_argument("--seed", type=int)
        cmd.add_argument("--workdir")
        cmd.add_argument("--jobs", type=int)
        cmd.add_argument("--split", choices=["train", "dev", "test", "all"])
        cmd.add_argument("--limit", type=int)
        cmd.add_argument("--p", type=int)
        cmd.add_argument("--q", type=int)
        if name == "make-corpus":
            cmd.add_argument("--clean-dir", dest="clean_dir")
            cmd.add_argument("--rir-count", dest="rir_count", type=int)
        if name == "train-mlp":
            cmd.add_argument("--epochs", type=int)
            cmd.add_argument("--hidden-width", dest="hidden_width", type=int)
            cmd.add_argument("--learning-rate", dest="learning_rate", type=float)
            cmd.add_argument("--batch-size", dest="batch_size", type=int)
        if name == "mix-sweep":
            cmd.add_argument("--enhancer", choices=list(mixing.ENHANCERS))
            cmd.add_argument("--streams-dir", dest="streams_dir")
        if name == "diagnose":
            cmd.add_argument("--max-lag", dest="max_lag", type=int)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    try:
        return COMMANDS[args.command](cfg)
    except (fir.SingularSystemError, mlp.TrainingDivergedError,
            rir.DecayRangeError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 4
    except (ConfigError, rir.GeometryError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (DataError, FileNotFoundError, OSError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
