"""Command line experiment runner.

    python -m tradeoff_lab <subcommand> --config run.ini [--out DIR] [--seed N] [--subset N]

Subcommands: train, adv-train, profile, distance, theorem, sweep. The config
is an INI file (``key = value`` lines under ``[section]`` headers); every key
is optional except where a subcommand needs it, and unknown keys are errors.

    [run]      kind, seed, out
    [data]     dir, validation_size, seed, train_subset, val_subset, test_subset
    [model]    arch, checkpoint, setting
    [train]    epochs, batch_size, lr, momentum, max_angle, mix_clean
    [attack]   epsilon, steps, step_size, random_start, train_steps, max_iter, overshoot
    [profile]  theta_grid, epsilon_grid, k_draws, nested, rotation
    [theorem]  d_values, p_values, delta, n
    [sweep]    axis (theta | epsilon), values

Exit codes: 0 success, 2 config error, 3 input error, 4 a checked
assertion failed (for example a theorem verdict), 1 anything else.
Every run writes ``manifest.json`` first and finalizes it at the end.
"""

from __future__ import annotations

import argparse
import configparser
import dataclasses
import datetime
import hashlib
import json
import os
import sys
import time

from . import __version__
from .attacks import AttackConfig, DeepFoolConfig
from .data import MNIST_FILES, VALIDATION_SIZE, AugmentationPolicy, IdxParseError, default_mnist_dir
from .experiments import adversarial_setting, desk_splits, rotated_points, rotation_setting
from .models import ARCHITECTURES, CheckpointError, build_model, load_checkpoint, save_checkpoint
from .plots import curve_chart
from .profiles import (CSV_HEADER, DEFAULT_EPSILON_GRID, DEFAULT_THETA_GRID, avg_perturbation_distance,
                       robustness_profile, rotation_invariance_profile)
from .theorem import run_battery, verdict_csv
from .train import TrainConfig, TrainingDiverged, train, training_attack

EXIT_OK, EXIT_FAILURE, EXIT_CONFIG, EXIT_INPUT, EXIT_ASSERT = 0, 1, 2, 3, 4
KINDS = ("train", "adv-train", "profile-invariance", "profile-robustness", "distance", "theorem")
SUBCOMMAND_KINDS = {
    "train": ("train",),
    "adv-train": ("adv-train",),
    "profile": ("profile-invariance", "profile-robustness"),
    "distance": ("distance",),
    "theorem": ("theorem",),
    "sweep": ("sweep",),
}


class ConfigError(ValueError):
    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(f"{f}: {m}" for f, m in self.problems))


class InputError(RuntimeError):
    pass


class AssertionFailed(RuntimeError):
    pass


def _bool(s):
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {s!r}")


def _opt_float(s):
    return None if s.strip().lower() in ("", "none") else float(s)


def _float_list(s):
    return tuple(float(v) for v in s.replace(",", " ").split())


def _int_list(s):
    return tuple(int(v) for v in s.replace(",", " ").split())


SCHEMA = {
    "run": {"kind": (str, ""), "seed": (int, 0), "out": (str, "")},
    "data": {"dir": (str, ""), "validation_size": (int, VALIDATION_SIZE), "seed": (int, 0),
             "train_subset": (int, 10_000), "val_subset": (int, 1_000), "test_subset": (int, 500)},
    "model": {"arch": (str, "stdcnn"), "checkpoint": (str, ""), "setting": (str, "")},
    "train": {"epochs": (int, 5), "batch_size": (int, 64), "lr": (float, 0.01), "momentum": (float, 0.9),
              "max_angle": (float, 0.0), "mix_clean": (_bool, False)},
    "attack": {"epsilon": (float, 0.3), "steps": (int, 40), "step_size": (_opt_float, None),
               "random_start": (_bool, True), "train_steps": (int, 10), "max_iter": (int, 50),
               "overshoot": (float, 0.02)},
    "profile": {"theta_grid": (_float_list, tuple(float(t) for t in DEFAULT_THETA_GRID)),
                "epsilon_grid": (_float_list, DEFAULT_EPSILON_GRID), "k_draws": (int, 4), "nested": (_bool, False),
                "rotation": (float, 0.0)},
    "theorem": {"d_values": (_int_list, (4, 100)), "p_values": (_float_list, (0.6, 0.7, 0.9)),
                "delta": (float, 0.05), "n": (int, 100_000)},
    "sweep": {"axis": (str, ""), "values": (_float_list, ())},
}


@dataclasses.dataclass
class ExperimentConfig:
    """Flat view of a parsed config; ``values[section][key]``."""

    values: dict
    source: str = ""

    def __getitem__(self, key):
        return self.values[key]

    @property
    def kind(self):
        return self.values["run"]["kind"]

    @property
    def seed(self):
        return self.values["run"]["seed"]

    def echo(self):
        return {s: {k: list(v) if isinstance(v, tuple) else v for k, v in kv.items()} for s, kv in self.values.items()}

    def train_config(self, adversarial_epsilon=None, max_angle=None):
        t, a = self["train"], self["attack"]
        adv = None
        if adversarial_epsilon is not None:
            adv = dataclasses.replace(training_attack(adversarial_epsilon, a["train_steps"], self.seed),
                                      step_size=a["step_size"], random_start=a["random_start"])
        angle = t["max_angle"] if max_angle is None else max_angle
        return TrainConfig(t["epochs"], t["batch_size"], t["lr"], t["momentum"], self.seed,
                           AugmentationPolicy(angle, self.seed), adv, t["mix_clean"])

    def attack_config(self):
        a = self["attack"]
        return AttackConfig(a["epsilon"], a["steps"], a["step_size"], a["random_start"], self.seed,
                            DeepFoolConfig(a["max_iter"], a["overshoot"]))


def parse_config(text, source="<string>", subcommand=None, seed=None, train_subset=None):
    """Parse and validate INI text; raises ConfigError listing every bad field."""
    cp = configparser.ConfigParser(interpolation=None)
    problems = []
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError([("config", str(exc).splitlines()[0])]) from exc
    values = {}
    for section in cp.sections():
        if section not in SCHEMA:
            problems.append((f"[{section}]", "unknown section"))
    for section, keys in SCHEMA.items():
        values[section] = {}
        given = cp[section] if cp.has_section(section) else {}
        for key in given:
            if key not in keys:
                problems.append((f"[{section}] {key}", "unknown key"))
        for key, (conv, default) in keys.items():
            if key in given:
                try:
                    values[section][key] = conv(given[key])
                except ValueError as exc:
                    problems.append((f"[{section}] {key}", f"cannot parse {given[key]!r} ({exc})"))
                    values[section][key] = default
            else:
                values[section][key] = default
    if seed is not None:
        values["run"]["seed"] = seed
    if train_subset is not None:
        values["data"]["train_subset"] = train_subset
    cfg = ExperimentConfig(values, source)
    problems += _validate(cfg, subcommand)
    if problems:
        raise ConfigError(problems)
    return cfg


def _validate(cfg, subcommand):
    problems = []
    kind = cfg.kind
    if subcommand is not None:
        allowed = SUBCOMMAND_KINDS[subcommand]
        if not kind and len(allowed) == 1:
            cfg.values["run"]["kind"] = kind = allowed[0]
        elif kind not in allowed:
            problems.append(("[run] kind", f"subcommand {subcommand!r} needs one of {', '.join(allowed)}; got {kind!r}"))
    elif kind not in KINDS + ("sweep",):
        problems.append(("[run] kind", f"must be one of {', '.join(KINDS + ('sweep',))}; got {kind!r}"))
    if cfg.seed < 0:
        problems.append(("[run] seed", "must be >= 0"))
    d = cfg["data"]
    for key in ("train_subset", "val_subset", "test_subset"):
        if d[key] < 1:
            problems.append((f"[data] {key}", "must be >= 1"))
    if d["validation_size"] < 0:
        problems.append(("[data] validation_size", "must be >= 0"))
    if cfg["model"]["arch"] not in ARCHITECTURES:
        problems.append(("[model] arch", f"must be one of {', '.join(ARCHITECTURES)}"))
    checks = [("train", lambda: cfg.train_config()), ("attack", lambda: cfg.attack_config())]
    for section, build in checks:
        try:
            build()
        except ValueError as exc:
            problems.append((f"[{section}]", str(exc)))
    p = cfg["profile"]
    if not p["theta_grid"] or any(not 0 <= t <= 180 for t in p["theta_grid"]):
        problems.append(("[profile] theta_grid", "needs values in [0, 180]"))
    if not p["epsilon_grid"] or any(not 0 <= e <= 1 for e in p["epsilon_grid"]):
        problems.append(("[profile] epsilon_grid", "needs values in [0, 1]"))
    for key in ("theta_grid", "epsilon_grid"):
        g = p[key]
        if any(b <= a for a, b in zip(g, g[1:])):
            problems.append((f"[profile] {key}", "must be strictly increasing"))
    if p["k_draws"] < 1:
        problems.append(("[profile] k_draws", "must be >= 1"))
    if not 0 <= p["rotation"] <= 180:
        problems.append(("[profile] rotation", "must lie in [0, 180]"))
    th = cfg["theorem"]
    if th["n"] < 1:
        problems.append(("[theorem] n", "must be >= 1"))
    if not th["d_values"] or any(v < 1 for v in th["d_values"]):
        problems.append(("[theorem] d_values", "needs integers >= 1"))
    if not th["p_values"] or any(not 0.5 <= v < 1 for v in th["p_values"]):
        problems.append(("[theorem] p_values", "needs values in [0.5, 1)"))
    if not 0 < th["delta"] < 1:
        problems.append(("[theorem] delta", "must lie in (0, 1)"))
    if kind == "sweep":
        sw = cfg["sweep"]
        if sw["axis"] not in ("theta", "epsilon"):
            problems.append(("[sweep] axis", "must be theta or epsilon"))
        if not sw["values"]:
            problems.append(("[sweep] values", "must be non-empty"))
        lo, hi = (0, 180) if sw["axis"] == "theta" else (0, 1)
        if any(not lo <= v <= hi for v in sw["values"]):
            problems.append(("[sweep] values", f"must lie in [{lo}, {hi}] for axis {sw['axis']}"))
    if kind == "train" and cfg["train"]["max_angle"] < 0:
        problems.append(("[train] max_angle", "must be >= 0"))
    return problems


def load_config(path, **overrides):
    if not os.path.exists(path):
        raise InputError(f"config file not found: {path}")
    with open(path, encoding="utf-8") as f:
        return parse_config(f.read(), path, **overrides)


# ---------------------------------------------------------------------------
# manifest


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _now():
    return datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="seconds")


class RunManifest:
    """JSON record of a run: config echo, input checksums, timestamps, artifacts."""

    def __init__(self, out_dir, command, cfg):
        self.out_dir = out_dir
        self.path = os.path.join(out_dir, "manifest.json")
        self.data = {"tool": "tradeoff_lab", "version": __version__, "command": command, "config": cfg.echo(),
                     "inputs": {}, "started": _now(), "finished": None, "status": "running", "exit_code": None,
                     "artifacts": [], "results": {}}
        self.write()

    def add_input(self, path):
        self.data["inputs"][os.path.abspath(path)] = sha256_file(path)

    def write_artifact(self, name, content):
        path = os.path.join(self.out_dir, name)
        os.makedirs(os.path.dirname(path), exist_ok=True)
        mode = "wb" if isinstance(content, bytes) else "w"
        with open(path, mode, **({} if mode == "wb" else {"encoding": "utf-8", "newline": ""})) as f:
            f.write(content)
        self.record(name)
        return path

    def record(self, name):
        self.data["artifacts"].append({"path": name, "sha256": sha256_file(os.path.join(self.out_dir, name))})

    def write(self):
        tmp = self.path + ".tmp"
        with open(tmp, "w", encoding="utf-8") as f:
            json.dump(self.data, f, indent=2, sort_keys=True)
            f.write("\n")
        os.replace(tmp, self.path)

    def finalize(self, status, exit_code):
        self.data.update(finished=_now(), status=status, exit_code=exit_code)
        self.write()


# ---------------------------------------------------------------------------
# run kinds


def _data(cfg, manifest):
    d = cfg["data"]
    directory = d["dir"] or default_mnist_dir()
    paths = [os.path.join(directory, f) for pair in MNIST_FILES.values() for f in pair]
    missing = [p for p in paths if not os.path.exists(p)]
    if missing:
        raise InputError(f"missing MNIST files: {', '.join(missing)}")
    for p in paths:
        manifest.add_input(p)
    try:
        return desk_splits(directory, d["train_subset"], d["val_subset"], d["test_subset"], d["seed"],
                           d["validation_size"])
    except IdxParseError as exc:
        raise InputError(str(exc)) from exc
    except ValueError as exc:
        raise ConfigError([("[data]", str(exc))]) from exc


def _model(cfg, manifest):
    m = cfg["model"]
    if not m["checkpoint"]:
        return build_model(m["arch"], cfg.seed), f"{m['arch']}-init{cfg.seed}"
    path = m["checkpoint"]
    if not os.path.exists(path):
        raise InputError(f"checkpoint not found: {path}")
    manifest.add_input(path)
    try:
        model = load_checkpoint(path)
    except CheckpointError as exc:
        raise InputError(f"{path}: {exc}") from exc
    return model, f"{model.spec.arch}-{os.path.splitext(os.path.basename(path))[0]}"


def _write_curves(manifest, curves, prefix=""):
    for c in curves:
        name = {"rate_of_invariance": "invariance"}.get(c.metric, c.metric)
        manifest.write_artifact(f"{prefix}{name}.csv", c.to_csv())
        manifest.write_artifact(f"{prefix}{name}.svg", curve_chart([c]))


def _train_into(cfg, manifest, splits, adversarial_epsilon=None, max_angle=None, prefix=""):
    tcfg = cfg.train_config(adversarial_epsilon, max_angle)
    try:
        model, report = train(build_model(cfg["model"]["arch"], cfg.seed), splits.train, tcfg, splits.val,
                              splits.test)
    except TrainingDiverged as exc:
        raise AssertionFailed(str(exc)) from exc
    path = os.path.join(manifest.out_dir, f"{prefix}model.ckpt")
    os.makedirs(os.path.dirname(path), exist_ok=True)
    save_checkpoint(model, path)
    manifest.record(f"{prefix}model.ckpt")
    manifest.write_artifact(f"{prefix}train_report.csv", report.to_csv())
    manifest.data["results"][f"{prefix}test_accuracy"] = report.test_accuracy
    manifest.data["results"][f"{prefix}wall_clock_seconds"] = round(report.wall_clock, 3)
    return model


def _profiles(cfg, model, test, model_id, setting, which=("invariance", "robustness")):
    p = cfg["profile"]
    curves = []
    if "invariance" in which:
        curves.append(rotation_invariance_profile(model, test.images, p["theta_grid"], p["k_draws"], cfg.seed,
                                                  model_id, setting))
    if "robustness" in which:
        curves += robustness_profile(model, test.images, test.labels, p["epsilon_grid"], cfg.attack_config(),
                                     p["nested"], model_id, setting)
        if p["nested"] and any(b > a for a, b in zip(curves[-2].values, curves[-2].values[1:])):
            raise AssertionFailed("nested robustness profile increased with epsilon")
    return curves


def run_train(cfg, manifest):
    splits = _data(cfg, manifest)
    eps = cfg["attack"]["epsilon"] if cfg.kind == "adv-train" else None
    _train_into(cfg, manifest, splits, adversarial_epsilon=eps)


def run_profile(cfg, manifest):
    splits = _data(cfg, manifest)
    model, model_id = _model(cfg, manifest)
    which = ("invariance",) if cfg.kind == "profile-invariance" else ("robustness",)
    _write_curves(manifest, _profiles(cfg, model, splits.test, model_id, cfg["model"]["setting"], which))


def run_distance(cfg, manifest):
    splits = _data(cfg, manifest)
    model, model_id = _model(cfg, manifest)
    a, rot = cfg["attack"], cfg["profile"]["rotation"]
    x = rotated_points(splits.test.images, rot, cfg.seed)
    mean, count = avg_perturbation_distance(model, x, a["max_iter"], a["overshoot"])
    rows = ["model_id,setting,rotation,mean_l2,converged,n,seed",
            f"{model_id},{cfg['model']['setting']},{rot!r},{mean!r},{count},{len(x)},{cfg.seed}"]
    manifest.write_artifact("distance.csv", "\n".join(rows) + "\n")
    manifest.data["results"].update(mean_l2=mean, converged=count)


def run_theorem(cfg, manifest):
    th = cfg["theorem"]
    verdicts = run_battery(th["p_values"], th["d_values"], th["n"], cfg.seed, th["delta"])
    manifest.write_artifact("verdicts.csv", verdict_csv(verdicts))
    failures = [v.failure() for v in verdicts if not v.passed]
    manifest.data["results"]["failures"] = failures
    if failures:
        raise AssertionFailed("; ".join(failures))


AGGREGATE_HEADER = ("axis", "value", "curve") + CSV_HEADER


def run_sweep(cfg, manifest):
    """One training + profiling sub-run per sweep value, then an aggregate CSV.

    Sub-runs execute in order; a failure aborts the sweep but everything
    already written (including the aggregate so far) stays on disk.
    """
    splits = _data(cfg, manifest)
    axis, arch = cfg["sweep"]["axis"], cfg["model"]["arch"]
    rows, by_curve = [",".join(AGGREGATE_HEADER)], {}
    try:
        for value in cfg["sweep"]["values"]:
            prefix = f"{axis}_{value:g}/"
            if axis == "theta":
                model = _train_into(cfg, manifest, splits, max_angle=value, prefix=prefix)
                setting = rotation_setting(value)
            else:
                model = _train_into(cfg, manifest, splits, adversarial_epsilon=value, prefix=prefix)
                setting = adversarial_setting(value)
            curves = _profiles(cfg, model, splits.test, f"{arch}-{setting}", setting)
            _write_curves(manifest, curves, prefix)
            for c in curves:
                if c.metric == "adversarial_accuracy":
                    continue
                by_curve.setdefault(c.metric, []).append(c)
                for line in c.to_csv().splitlines()[1:]:
                    rows.append(f"{axis},{value!r},{c.metric},{line}")
    finally:
        manifest.write_artifact("aggregate.csv", "\n".join(rows) + "\n")
        for metric, curves in by_curve.items():
            name = {"rate_of_invariance": "invariance"}.get(metric, metric)
            manifest.write_artifact(f"{name}.svg", curve_chart(curves, f"{metric} ({axis} sweep)"))


DISPATCH = {"train": run_train, "adv-train": run_train, "profile-invariance": run_profile,
            "profile-robustness": run_profile, "distance": run_distance, "theorem": run_theorem, "sweep": run_sweep}


def run(cfg, out_dir, command="run"):
    """Execute ``cfg`` writing into ``out_dir``; returns the exit status."""
    os.makedirs(out_dir, exist_ok=True)
    manifest = RunManifest(out_dir, command, cfg)
    t0 = time.perf_counter()
    status, code = "failed", EXIT_FAILURE
    try:
        DISPATCH[cfg.kind](cfg, manifest)
        status, code = "ok", EXIT_OK
    except ConfigError as exc:
        code = EXIT_CONFIG
        _report(exc)
    except InputError as exc:
        code = EXIT_INPUT
        print(f"input error: {exc}", file=sys.stderr)
    except AssertionFailed as exc:
        code = EXIT_ASSERT
        print(f"check failed: {exc}", file=sys.stderr)
    finally:
        manifest.data["results"]["elapsed_seconds"] = round(time.perf_counter() - t0, 3)
        manifest.finalize(status, code)
    return code


def _report(exc):
    for field, msg in exc.problems:
        print(f"config error: {field}: {msg}", file=sys.stderr)


def build_parser():
    parser = argparse.ArgumentParser(prog="tradeoff-lab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in SUBCOMMAND_KINDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="INI experiment config")
        p.add_argument("--out", help="output directory (overrides [run] out)")
        p.add_argument("--seed", type=int, help="global seed (overrides [run] seed)")
        p.add_argument("--subset", type=int, help="training subset size (overrides [data] train_subset)")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, subcommand=args.command, seed=args.seed, train_subset=args.subset)
    except ConfigError as exc:
        _report(exc)
        return EXIT_CONFIG
    except InputError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    out = args.out or cfg["run"]["out"]
    if not out:
        print("config error: [run] out: no output directory (set it or pass --out)", file=sys.stderr)
        return EXIT_CONFIG
    return run(cfg, out, command=" ".join([args.command] + (argv if argv is not None else sys.argv[1:])[1:]))


if __name__ == "__main__":
    sys.exit(main())
