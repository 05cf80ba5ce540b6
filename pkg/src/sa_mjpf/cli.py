"""Command-line orchestration: simulate, train, test, evaluate.

Exit codes: 0 success, 1 internal error, 2 usage error, 3 refusal to
overwrite existing output. Every config key can come from a flat-dotted
config file (``key = value`` lines) and be overridden by a CLI flag of
the same name; relative paths resolve against $SA_MJPF_DATA_DIR when set.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .collective import build_coupled_model, load_coupled_model, run_coupled_trace, save_coupled_model, write_coupled_csv
from .errors import EvalError, SaMjpfError
from .evaluation import DetectionReport, calibrate_threshold, evaluate_trace
from .gng import GngParams
from .mjpf import MjpfConfig, run_trace
from .model import KINEMATIC, Modality, load_model, save_model, train_model
from .pipeline import load_csv, synchronize
from .simulate import SCENARIOS, ScenarioSpec, generate, load_truth_windows, self_check

ENV_BASE_DIR = "SA_MJPF_DATA_DIR"

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_USAGE = 2
EXIT_REFUSAL = 3


@dataclass
class RunConfig:
    """Flat run configuration; field names map to dotted config keys by
    replacing ``__`` with ``.`` (e.g. gng__max_nodes <-> gng.max_nodes)."""

    data_dir: str = "data"
    model_dir: str = "models"
    output_dir: str = "output"
    dt: float = 0.0  # 0 -> infer from the data's median sample spacing
    threshold: float = 0.3
    modalities: str = "xy,sv,sp,vp"
    seed: int = 0
    gng__max_nodes: int = 30
    gng__lambda_insert: int = 100
    gng__eps_b: float = 0.2
    gng__eps_n: float = 0.006
    gng__a_max: int = 50
    gng__alpha: float = 0.5
    gng__d_decay: float = 0.995
    gng__epochs: int = 10
    train__smoothing: float = 1e-3
    train__q_scale: float = 1.0
    train__dynamics_mode: str = KINEMATIC
    mjpf__particles_per_word: int = 10
    mjpf__resample_threshold: float = 0.5
    mjpf__obs_noise: float = 1e-4
    mjpf__deriv_noise_factor: float = 0.15
    scenario__kind: str = "pmt"
    scenario__laps: int = 4
    scenario__samples_per_lap: int = 800
    scenario__cruise_speed: float = 1.5
    scenario__stop_dwell: float = 8.0
    scenario__detour_offset: float = 1.8
    scenario__detour_length: float = 3.6
    eval__min_run: int = 3

    def __post_init__(self):
        if not (0 < self.threshold < 1):
            raise SaMjpfError("threshold must be in (0, 1)")

    # -- derived objects -----------------------------------------------------

    def modality_list(self) -> list[Modality]:
        return [Modality.from_tag(tag) for tag in self.modalities.split(",") if tag]

    def gng_params(self) -> GngParams:
        return GngParams(
            max_nodes=self.gng__max_nodes,
            lambda_insert=self.gng__lambda_insert,
            eps_b=self.gng__eps_b,
            eps_n=self.gng__eps_n,
            a_max=self.gng__a_max,
            alpha=self.gng__alpha,
            d_decay=self.gng__d_decay,
            epochs=self.gng__epochs,
            seed=self.seed,
        )

    def mjpf_config(self, dt: float) -> MjpfConfig:
        kappa = self.mjpf__deriv_noise_factor
        return MjpfConfig(
            particles_per_word=self.mjpf__particles_per_word,
            resample_threshold=self.mjpf__resample_threshold,
            obs_noise=self.mjpf__obs_noise,
            deriv_obs_noise=2.0 * self.mjpf__obs_noise / dt**2 * kappa**2,
            seed=self.seed,
        )

    def scenario_spec(self, kind: str | None = None) -> ScenarioSpec:
        return ScenarioSpec(
            kind=kind or self.scenario__kind,
            laps=self.scenario__laps,
            samples_per_lap=self.scenario__samples_per_lap,
            cruise_speed=self.scenario__cruise_speed,
            stop_dwell=self.scenario__stop_dwell,
            detour_offset=self.scenario__detour_offset,
            detour_length=self.scenario__detour_length,
            seed=self.seed,
        )

    def resolve(self, path: str) -> Path:
        base = os.environ.get(ENV_BASE_DIR)
        p = Path(path)
        if base and not p.is_absolute():
            return Path(base) / p
        return p


CONFIG_KEYS = {f.name.replace("__", "."): f for f in fields(RunConfig)}


def _field_type(f) -> type:
    if isinstance(f.type, type):
        return f.type
    return {"int": int, "float": float, "str": str}[f.type]


def parse_config_file(path) -> dict:
    """Flat dotted-key config: one ``key = value`` per line, # comments."""
    values = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        for sep in ("=", ":"):
            if sep in line:
                key, _, value = line.partition(sep)
                break
        else:
            raise SaMjpfError(f"{path}:{lineno}: expected 'key = value'")
        key, value = key.strip(), value.strip()
        if key not in CONFIG_KEYS:
            raise SaMjpfError(f"{path}:{lineno}: unknown config key {key!r}")
        values[key] = value
    return values


def build_config(args: argparse.Namespace) -> RunConfig:
    values: dict = {}
    if getattr(args, "config", None):
        values.update(parse_config_file(args.config))
    for dotted in CONFIG_KEYS:
        cli_val = getattr(args, dotted.replace(".", "__"), None)
        if cli_val is not None:
            values[dotted] = cli_val
    if getattr(args, "seed", None) is not None:
        values["seed"] = args.seed
    kwargs = {}
    for dotted, value in values.items():
        f = CONFIG_KEYS[dotted]
        kwargs[f.name] = _field_type(f)(value)
    return RunConfig(**kwargs)


# -- commands -------------------------------------------------------------------


def cmd_simulate(config: RunConfig, force: bool) -> int:
    spec = config.scenario_spec()
    out_dir = config.resolve(config.data_dir)
    existing = [p for p in [out_dir / "agent1.csv", out_dir / "truth_windows.json"] if p.exists()]
    if existing and not force:
        print(
            f"refusing to overwrite {existing[0]} (pass --force to allow)",
            file=sys.stderr,
        )
        return EXIT_REFUSAL
    dataset = generate(spec)
    report = self_check(dataset)
    for line in report.violations:
        print(f"self-check violation: {line}", file=sys.stderr)
    files = dataset.write(out_dir)
    n = spec.n_samples
    print(f"scenario {spec.kind}: {len(dataset.agents)} agent(s), {n} samples each")
    for f in files:
        print(f"  wrote {f}")
    return EXIT_OK if report.ok else EXIT_INTERNAL


def _agent_csvs(data_dir: Path) -> list[Path]:
    agents = sorted(data_dir.glob("agent*.csv"))
    if not agents:
        raise SaMjpfError(f"no agent CSV files found in {data_dir}")
    return agents


def _load_pair(path: Path, modality: Modality, dt: float):
    schema = {"t": "t", **{name: name for name in modality.channel_pair}}
    channels = load_csv(path, schema)
    if dt <= 0:
        spacing = np.diff(channels[0].timestamps)
        dt = float(np.median(spacing))
    return synchronize(channels, dt)


def cmd_train(config: RunConfig) -> int:
    data_dir = config.resolve(config.data_dir)
    model_dir = config.resolve(config.model_dir)
    model_dir.mkdir(parents=True, exist_ok=True)
    agents = _agent_csvs(data_dir)
    modalities = config.modality_list()

    xy_models = {}
    xy_series = {}
    total = 0.0
    for agent_path in agents:
        agent = agent_path.stem
        for modality in modalities:
            t0 = time.perf_counter()
            series = _load_pair(agent_path, modality, config.dt)
            model = train_model(
                series,
                modality,
                gng_params=config.gng_params(),
                smoothing=config.train__smoothing,
                dynamics_mode=config.train__dynamics_mode,
                q_scale=config.train__q_scale,
            )
            elapsed = time.perf_counter() - t0
            total += elapsed
            out = model_dir / f"{agent}_{modality.name.lower()}.json"
            save_model(model, out)
            print(
                f"trained {agent}/{modality.name}: K={model.k_words} words "
                f"in {elapsed:.2f}s -> {out}"
            )
            if modality is Modality.XY:
                xy_models[agent] = model
                xy_series[agent] = series

    if len(agents) == 2 and len(xy_models) == 2:
        a1, a2 = (p.stem for p in agents)
        coupled = build_coupled_model(
            xy_models[a1], xy_models[a2], xy_series[a1], xy_series[a2],
            agent_ids=(a1, a2), smoothing=config.train__smoothing,
        )
        out = model_dir / "coupled.json"
        save_coupled_model(coupled, out)
        print(f"trained coupled co-occurrence model -> {out}")
    print(f"total training time {total:.2f}s")
    return EXIT_OK


def cmd_test(config: RunConfig) -> int:
    data_dir = config.resolve(config.data_dir)
    model_dir = config.resolve(config.model_dir)
    out_dir = config.resolve(config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    agents = _agent_csvs(data_dir)
    modalities = config.modality_list()

    truth_path = data_dir / "truth_windows.json"
    truth = load_truth_windows(truth_path) if truth_path.exists() else []

    timing = {}
    for a_idx, agent_path in enumerate(agents):
        agent = agent_path.stem
        windows = [
            (w.t_start, w.t_end) for w in truth if w.agent == a_idx
        ]
        for modality in modalities:
            model_path = model_dir / f"{agent}_{modality.name.lower()}.json"
            model = load_model(model_path)
            series = _load_pair(agent_path, modality, config.dt)
            trace = run_trace(
                model,
                config.mjpf_config(series.dt),
                series,
                truth_windows=windows or None,
                threshold=config.threshold,
            )
            out = out_dir / f"{agent}_{modality.name.lower()}_trace.csv"
            trace.write_csv(out)
            timing[out.name] = trace.per_sample_ms
            print(
                f"traced {agent}/{modality.name}: {len(trace)} samples, "
                f"{trace.per_sample_ms:.2f} ms/sample -> {out}"
            )

    coupled_path = model_dir / "coupled.json"
    if coupled_path.exists() and len(agents) == 2:
        coupled = load_coupled_model(coupled_path)
        series = [_load_pair(p, Modality.XY, config.dt) for p in agents]
        for self_idx, agent_path in enumerate(agents):
            samples = run_coupled_trace(
                coupled, series[self_idx], series[1 - self_idx], self_index=self_idx
            )
            out = out_dir / f"{agent_path.stem}_coupled_trace.csv"
            write_coupled_csv(out, samples, t0=series[self_idx].t0, dt=series[self_idx].dt)
            print(f"coupled trace {agent_path.stem}: {len(samples)} samples -> {out}")

    (out_dir / "timing.json").write_text(
        json.dumps(timing, indent=1, sort_keys=True) + "\n", encoding="utf-8"
    )
    return EXIT_OK


def read_trace_csv(path) -> dict[str, np.ndarray]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        rows = list(reader)
    if not rows:
        raise EvalError(f"{path}: empty trace")
    return {
        key: np.array([float(r[key]) for r in rows])
        for key in ("t", "theta")
    }


def cmd_eval(config: RunConfig, args) -> int:
    traces_dir = config.resolve(args.traces or config.output_dir)
    truth_file = config.resolve(args.truth) if args.truth else traces_dir / "truth_windows.json"
    if not Path(truth_file).exists():
        candidate = config.resolve(config.data_dir) / "truth_windows.json"
        truth_file = candidate
    truth = load_truth_windows(truth_file) if Path(truth_file).exists() else []

    timing_path = Path(traces_dir) / "timing.json"
    timing = json.loads(timing_path.read_text()) if timing_path.exists() else {}

    report = DetectionReport(threshold=config.threshold, min_run=config.eval__min_run)
    trace_files = sorted(Path(traces_dir).glob("*_trace.csv"))
    if not trace_files:
        raise EvalError(f"no *_trace.csv files in {traces_dir}")
    for path in trace_files:
        if path.name.endswith("_coupled_trace.csv"):
            continue
        agent = path.name.split("_")[0]
        a_idx = int(agent.replace("agent", "")) - 1
        data = read_trace_csv(path)
        windows = [(w.t_start, w.t_end) for w in truth if w.agent == a_idx]
        report.traces.append(
            evaluate_trace(
                data["t"],
                data["theta"],
                windows,
                threshold=config.threshold,
                min_run=config.eval__min_run,
                name=path.stem.replace("_trace", ""),
                per_sample_ms=timing.get(path.name, float("nan")),
            )
        )

    if args.calibrate:
        normal = read_trace_csv(config.resolve(args.calibrate))
        report.calibrated_threshold = calibrate_threshold(normal["theta"])
        print(
            f"calibrated threshold (95th percentile of normal trace): "
            f"{report.calibrated_threshold:.4f}; fixed default: {config.threshold}"
        )

    out = Path(traces_dir) / "detection_report.json"
    report.write_json(out)
    print(f"{'trace':24s} {'recall':>7s} {'FA/min':>7s} {'mean in':>8s} {'mean out':>9s} {'ms':>6s}")
    for tr in report.traces:
        print(
            f"{tr.name:24s} {tr.recall:7.2f} {tr.false_alarms_per_minute:7.3f} "
            f"{tr.mean_theta_inside:8.3f} {tr.mean_theta_outside:9.3f} {tr.per_sample_ms:6.2f}"
        )
    print(f"wrote {out}")
    return EXIT_OK


# -- entry point --------------------------------------------------------------


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="flat dotted-key config file")
    parser.add_argument("--seed", type=int, help="RNG seed for all stages")
    for dotted, f in CONFIG_KEYS.items():
        if dotted == "seed":
            continue
        parser.add_argument(
            f"--{dotted}",
            dest=f.name,
            type=_field_type(f),
            default=None,
            help=argparse.SUPPRESS,
        )


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sa-mjpf",
        description="Switching-DBN anomaly detection: simulate, train, test, eval.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="generate a synthetic scenario dataset")
    p_sim.add_argument("--scenario", choices=SCENARIOS, help="scenario kind")
    p_sim.add_argument("--laps", type=int, help="number of laps")
    p_sim.add_argument("--out", help="output directory (default: data_dir)")
    p_sim.add_argument("--force", action="store_true", help="overwrite existing output")
    _add_config_flags(p_sim)

    p_train = sub.add_parser("train", help="train models from normal-behavior CSVs")
    p_train.add_argument("--data", help="directory with agent CSVs")
    p_train.add_argument("--models", help="model output directory")
    _add_config_flags(p_train)

    p_test = sub.add_parser("test", help="run the filter over test CSVs")
    p_test.add_argument("--data", help="directory with test CSVs")
    p_test.add_argument("--models", help="model directory")
    p_test.add_argument("--out", help="trace output directory")
    _add_config_flags(p_test)

    p_eval = sub.add_parser("eval", help="score traces against truth windows")
    p_eval.add_argument("--traces", help="directory with *_trace.csv files")
    p_eval.add_argument("--truth", help="truth_windows.json path")
    p_eval.add_argument(
        "--calibrate", help="normal trace CSV for percentile threshold calibration"
    )
    _add_config_flags(p_eval)
    return parser


def main(argv=None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    try:
        # command-specific aliases feed the shared config
        if getattr(args, "scenario", None):
            args.scenario__kind = args.scenario
        if getattr(args, "laps", None):
            args.scenario__laps = args.laps
        if getattr(args, "data", None):
            args.data_dir = args.data
        if getattr(args, "models", None):
            args.model_dir = args.models
        if getattr(args, "out", None):
            if args.command == "simulate":
                args.data_dir = args.out
            else:
                args.output_dir = args.out
        config = build_config(args)

        if args.command == "simulate":
            return cmd_simulate(config, force=args.force)
        if args.command == "train":
            return cmd_train(config)
        if args.command == "test":
            return cmd_test(config)
        if args.command == "eval":
            return cmd_eval(config, args)
        parser.error(f"unknown command {args.command!r}")
    except SaMjpfError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except Exception as exc:  # pragma: no cover - unexpected internal errors
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
