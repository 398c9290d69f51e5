"""Command-line harness: ``tauleap {simulate,converge,verify,oracle}``.

Every command reads one JSON config; flags override its fields.  Exit codes:
0 success, 2 config or model error, 3 inconclusive result or failed check.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .cme import TruncationError, TruncationSpec, cme_solve
from .convergence import convergence_experiment
from .io import config_hash, model_hash, write_csv, write_json, write_pmf_csv
from .kernels import KERNEL_NAMES, make_kernel
from .network import BUILTIN_MODELS, ModelError, ReactionNetwork, load_network
from .pmf import NormSpec, SparsePmf
from .ssa import moment_summary, ssa_ensemble
from .transition import Mesh, tauleap_ensemble
from .verifier import verification_report

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INCONCLUSIVE = 3


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    model: str
    x0: list[int]
    T: float
    seed: int
    kernel: str = "remm"
    model_params: dict = field(default_factory=dict)
    kernel_overrides: dict = field(default_factory=dict)
    tau_list: list[float] = field(default_factory=lambda: [0.25, 0.125, 0.0625, 0.03125])
    r_list: list[float] = field(default_factory=lambda: [0, 2])
    norm: dict = field(default_factory=lambda: {"kind": "one"})
    truncation: dict | None = None
    engine: str = "ssa"
    n_samples: int = 1000
    chunk: int = 1000
    workers: int = 1
    out: str = "out"
    verify: dict = field(default_factory=dict)

    # fields that change where or how fast results are produced, not what they are
    _UNHASHED = ("out", "workers")

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown config fields: {', '.join(unknown)}")
        for key in ("model", "x0", "T", "seed"):
            if d.get(key) is None:
                raise ConfigError(f"config is missing {key!r}")
        try:
            cfg = cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None
        cfg.validate()
        return cfg

    def validate(self):
        try:
            self.T = float(self.T)
            self.seed = int(self.seed)
            self.x0 = [int(v) for v in self.x0]
            self.tau_list = [float(t) for t in self.tau_list]
            self.r_list = [float(r) if float(r) != int(float(r)) else int(float(r)) for r in self.r_list]
            self.n_samples = int(self.n_samples)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad config value: {exc}") from None
        if not self.T > 0:
            raise ConfigError("T must be positive")
        if self.seed < 0 or self.seed >= 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        if not self.tau_list or any(t <= 0 for t in self.tau_list):
            raise ConfigError("tau_list must hold positive step sizes")
        if any(b >= a for a, b in zip(self.tau_list, self.tau_list[1:])):
            raise ConfigError("tau_list must be strictly decreasing")
        if any(r < 0 for r in self.r_list):
            raise ConfigError("r_list entries must be non-negative")
        if self.kernel not in KERNEL_NAMES:
            raise ConfigError(f"unknown kernel {self.kernel!r}; choose from {', '.join(KERNEL_NAMES)}")
        if self.engine not in ("ssa", "tauleap"):
            raise ConfigError("engine must be 'ssa' or 'tauleap'")
        if self.n_samples < 0:
            raise ConfigError("n_samples must be non-negative")
        try:
            NormSpec.from_dict(self.norm)
        except (ValueError, KeyError) as exc:
            raise ConfigError(f"bad norm: {exc}") from None

    def hashed(self) -> dict:
        d = asdict(self)
        for key in self._UNHASHED:
            d.pop(key, None)
        return d

    def load_model(self) -> ReactionNetwork:
        if self.model in BUILTIN_MODELS:
            try:
                net = BUILTIN_MODELS[self.model](**self.model_params)
            except TypeError as exc:
                raise ConfigError(f"bad model_params: {exc}") from None
        else:
            path = Path(self.model)
            if not path.is_file():
                raise ConfigError(f"model file not found: {self.model}")
            net = load_network(path)
        if len(self.x0) != net.n_species:
            raise ConfigError(f"x0 has {len(self.x0)} entries, model has {net.n_species} species")
        return net

    def truncation_spec(self, net: ReactionNetwork) -> TruncationSpec:
        if not self.truncation or "upper" not in self.truncation:
            raise ConfigError("config needs truncation.upper for the CME oracle")
        t = self.truncation
        try:
            return TruncationSpec.box(t["upper"], t.get("lower"), t.get("mass_tolerance", 1e-8))
        except ValueError as exc:
            raise ConfigError(f"bad truncation: {exc}") from None


def _out_dir(cfg: ExperimentConfig) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_simulate(cfg: ExperimentConfig) -> int:
    net = cfg.load_model()
    chash = config_hash(cfg.hashed())
    out = _out_dir(cfg)
    if cfg.engine == "ssa":
        samples = ssa_ensemble(net, cfg.x0, cfg.T, cfg.n_samples, cfg.seed, cfg.workers, cfg.chunk)
    else:
        kernel = make_kernel(cfg.kernel, net, cfg.kernel_overrides)
        samples = tauleap_ensemble(kernel, cfg.x0, Mesh.uniform(cfg.T, cfg.tau_list[0]), cfg.n_samples,
                                   cfg.seed, cfg.workers, cfg.chunk)
    write_csv(out / "samples.csv", net.species, samples.tolist(), chash)
    write_json(out / "summary.json", {
        "command": "simulate",
        "engine": cfg.engine,
        "kernel": cfg.kernel if cfg.engine == "tauleap" else None,
        "tau": cfg.tau_list[0] if cfg.engine == "tauleap" else None,
        "T": cfg.T,
        "seed": cfg.seed,
        "species": list(net.species),
        "model_sha256": model_hash(net.source()),
        "moments": moment_summary(samples),
    }, chash)
    return EXIT_OK


def cmd_converge(cfg: ExperimentConfig) -> int:
    net = cfg.load_model()
    trunc = cfg.truncation_spec(net)
    chash = config_hash(cfg.hashed())
    kernel = make_kernel(cfg.kernel, net, cfg.kernel_overrides)
    norm = NormSpec.from_dict(cfg.norm)
    try:
        reports = convergence_experiment(kernel, SparsePmf.delta(cfg.x0), cfg.T, cfg.tau_list, cfg.r_list,
                                         trunc, norm)
    except TruncationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INCONCLUSIVE
    out = _out_dir(cfg)
    rows = []
    for r, rep in reports.items():
        for i, tau in enumerate(rep.taus):
            rows.append([r, tau, rep.errors[i], rep.moment_errors[i], rep.oracle_loss[i],
                         rep.pushforward_loss[i], rep.loss_bound[i]])
    write_csv(out / "convergence.csv",
              ["r", "tau", "error", "moment_error", "oracle_loss", "pushforward_loss", "loss_bound"], rows, chash)
    conclusive = all(rep.conclusive for rep in reports.values())
    write_json(out / "convergence.json", {
        "command": "converge",
        "kernel": cfg.kernel,
        "model_sha256": model_hash(net.source()),
        "reports": [rep.to_dict() for rep in reports.values()],
        "conclusive": conclusive,
    }, chash)
    for rep in reports.values():
        order = "n/a" if rep.fitted_order is None else f"{rep.fitted_order:.3f}"
        print(f"r={rep.r} order={order} flags={','.join(rep.flags) or '-'}")
    return EXIT_OK if conclusive else EXIT_INCONCLUSIVE


def cmd_verify(cfg: ExperimentConfig) -> int:
    net = cfg.load_model()
    trunc = cfg.truncation_spec(net)
    chash = config_hash(cfg.hashed())
    kernel = make_kernel(cfg.kernel, net, cfg.kernel_overrides)
    opts = dict(cfg.verify)
    allowed = {"t_grid", "tau_grid", "r_list", "boxes", "n_states", "consistency_states", "consistency_tol",
               "alpha_bound"}
    if set(opts) - allowed:
        raise ConfigError(f"unknown verify options: {', '.join(sorted(set(opts) - allowed))}")
    report = verification_report(kernel, cfg.x0, trunc, seed=cfg.seed, **opts)
    out = _out_dir(cfg)
    write_json(out / "verification.json", {
        "command": "verify",
        "kernel": cfg.kernel,
        "model_sha256": model_hash(net.source()),
        "report": report,
    }, chash)
    summary = report["summary"]
    for name, verdict in summary.items():
        print(f"{name}: {verdict}")
    return EXIT_INCONCLUSIVE if "fail" in summary.values() else EXIT_OK


def cmd_oracle(cfg: ExperimentConfig) -> int:
    net = cfg.load_model()
    trunc = cfg.truncation_spec(net)
    chash = config_hash(cfg.hashed())
    try:
        sol = cme_solve(net, SparsePmf.delta(cfg.x0), cfg.T, trunc)
    except TruncationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INCONCLUSIVE
    out = _out_dir(cfg)
    write_pmf_csv(out / "pmf.csv", sol.pmf, net.species, chash)
    write_json(out / "pmf.json", {
        "command": "oracle",
        "t": cfg.T,
        "seed": cfg.seed,
        "truncation_loss": sol.truncation_loss,
        "truncation": trunc.to_dict(),
        "uniformization_rate": sol.uniformization_rate,
        "series_terms": sol.series_terms,
        "model_sha256": model_hash(net.source()),
    }, chash)
    return EXIT_OK


COMMANDS = {"simulate": cmd_simulate, "converge": cmd_converge, "verify": cmd_verify, "oracle": cmd_oracle}


def _csv_floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tauleap", description="Tau-leap convergence experiments.")
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", help="JSON experiment config")
    parser.add_argument("--model", help="model file or builtin name (" + ", ".join(sorted(BUILTIN_MODELS)) + ")")
    parser.add_argument("--kernel", help="tau-leap kernel: " + ", ".join(KERNEL_NAMES))
    parser.add_argument("--seed", type=int, help="root seed (unsigned 64-bit)")
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--tau", type=_csv_floats, help="comma-separated step sizes, decreasing")
    parser.add_argument("--r", type=_csv_floats, help="comma-separated moment orders")
    parser.add_argument("--T", type=float, help="final time")
    parser.add_argument("--n", type=int, help="number of samples (simulate)")
    parser.add_argument("--workers", type=int, help="worker processes for ensembles")
    return parser


def load_config(args) -> ExperimentConfig:
    raw: dict = {}
    if args.config:
        try:
            raw = json.loads(Path(args.config).read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {args.config}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from None
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
    overrides = {"model": args.model, "kernel": args.kernel, "seed": args.seed, "out": args.out,
                 "tau_list": args.tau, "r_list": args.r, "T": args.T, "n_samples": args.n,
                 "workers": args.workers}
    raw.update({k: v for k, v in overrides.items() if v is not None})
    return ExperimentConfig.from_dict(raw)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args)
        return COMMANDS[args.command](cfg)
    except (ConfigError, ModelError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
