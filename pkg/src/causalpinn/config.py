"""Experiment configuration: a sectioned plain-text format with typed keys.

Grammar: INI sections [problem], [network], [loss], [weights], [training],
[output]; every key is validated against the schema below and unknown keys
are rejected. `to_text` regenerates a canonical file that parses back to the
same configuration.
"""

from __future__ import annotations

import configparser
import io
from dataclasses import dataclass, replace

from .losses import LossConfig
from .network import FourierEmbedding, NetworkSpec, mlp_spec, paf_kdv_spec
from .problems import DomainBox, make_problem
from .training import SchedulerSpec, StageSpec, TrainRun
from .weights import SCHEMES


class ConfigError(ValueError):
    """Invalid experiment configuration (reported with exit code 2)."""


_PROBLEM_PARAM_KEYS = {
    "allen_cahn": ("diffusion", "reaction"),
    "kdv": ("eta", "mu"),
    "petrov_kudrin": ("alpha", "eps1"),
}

_SCHEMA = {
    "problem": {"kind", "t_final", "x1", "x2", "n_t", "n_x",
                "diffusion", "reaction", "eta", "mu", "alpha", "eps1"},
    "network": {"type", "hidden_layers", "width", "activation",
                "embedding_m", "embedding_period", "seed"},
    "loss": {"mode", "lambda_ic", "lambda_bc", "lambda_r", "cross_term",
             "log_transform", "delta_rule"},
    "weights": {"scheme", "eps_init", "delta_w", "m_eps"},
    "training": {"algorithm", "epochs", "scheduler", "eta_start", "eta_min",
                 "step_gamma", "step_every", "stages"},
    "output": {"log_every", "weight_log_every", "reference", "snapshot_times"},
}

_BOOLS = {"true": True, "false": False, "1": True, "0": False,
          "yes": True, "no": False}


@dataclass(frozen=True)
class ExperimentConfig:
    problem_kind: str
    problem_params: dict
    box: DomainBox
    network_type: str
    hidden_layers: int
    width: int
    activation: str
    embedding_m: int
    embedding_period: float
    seed: int
    loss: LossConfig
    scheme: str
    eps_init: float
    delta_w: float
    m_eps: float
    algorithm: int
    epochs: int
    scheduler: str
    eta_start: float
    eta_min: float | None
    step_gamma: float | None
    step_every: int | None
    stages: tuple | None          # ((epochs, eta_start, eps_init), ...)
    log_every: int
    weight_log_every: int
    reference: str                # "auto", "none", or a grid-file path
    snapshot_times: tuple

    # -- construction of run objects -----------------------------------------

    def make_problem(self):
        return make_problem(self.problem_kind, **self.problem_params)

    def network_spec(self, seed_override: int | None = None) -> NetworkSpec:
        seed = self.seed if seed_override is None else seed_override
        problem = self.make_problem()
        if self.network_type == "paf_kdv":
            spec = paf_kdv_spec(seed=seed)
            if problem.channels != 1:
                raise ConfigError("the heterogeneous architecture is single-channel")
            return spec
        embedding = None
        if self.embedding_m > 0:
            embedding = FourierEmbedding(self.embedding_m, self.embedding_period)
        return mlp_spec(self.hidden_layers, self.width,
                        activation=self.activation,
                        output_dim=problem.channels,
                        embedding=embedding, seed=seed)

    def scheduler_spec(self, n_epochs: int, eta_start: float) -> SchedulerSpec:
        return SchedulerSpec(self.scheduler, eta_start, max(n_epochs, 1),
                             eta_min=self.eta_min, gamma=self.step_gamma,
                             step_every=self.step_every)

    def stage_specs(self) -> tuple[StageSpec, ...]:
        if self.stages:
            return tuple(StageSpec(int(e), self.scheduler_spec(int(e), lr), eps)
                         for e, lr, eps in self.stages)
        return (StageSpec(self.epochs,
                          self.scheduler_spec(self.epochs, self.eta_start),
                          self.eps_init),)

    def to_run(self, net=None, seed_override=None) -> TrainRun:
        from .network import init_xavier

        problem = self.make_problem()
        if net is None:
            net = init_xavier(self.network_spec(seed_override))
        return TrainRun(problem=problem, box=self.box, network=net,
                        loss_cfg=self.loss, scheme=self.scheme,
                        stages=self.stage_specs(), algorithm=self.algorithm,
                        delta_w=self.delta_w, m_eps=self.m_eps,
                        seed=self.seed if seed_override is None else seed_override,
                        log_every=self.log_every,
                        weight_log_every=self.weight_log_every)

    # -- serialization ----------------------------------------------------------

    def to_text(self) -> str:
        cp = configparser.ConfigParser()
        cp["problem"] = {"kind": self.problem_kind,
                         "t_final": repr(self.box.t_final),
                         "x1": repr(self.box.x1), "x2": repr(self.box.x2),
                         "n_t": str(self.box.n_t), "n_x": str(self.box.n_x),
                         **{k: repr(v) for k, v in self.problem_params.items()}}
        cp["network"] = {"type": self.network_type,
                         "hidden_layers": str(self.hidden_layers),
                         "width": str(self.width),
                         "activation": self.activation,
                         "embedding_m": str(self.embedding_m),
                         "embedding_period": repr(self.embedding_period),
                         "seed": str(self.seed)}
        cp["loss"] = {"mode": self.loss.mode,
                      "lambda_ic": repr(self.loss.lambda_ic),
                      "lambda_bc": repr(self.loss.lambda_bc),
                      "lambda_r": repr(self.loss.lambda_r),
                      "cross_term": str(self.loss.include_cross_term).lower(),
                      "log_transform": str(self.loss.log_transform).lower(),
                      "delta_rule": self.loss.delta_rule}
        cp["weights"] = {"scheme": self.scheme, "eps_init": repr(self.eps_init),
                         "delta_w": repr(self.delta_w), "m_eps": repr(self.m_eps)}
        training = {"algorithm": str(self.algorithm),
                    "scheduler": self.scheduler,
                    "eta_start": repr(self.eta_start)}
        if not self.stages:
            training["epochs"] = str(self.epochs)
        if self.eta_min is not None:
            training["eta_min"] = repr(self.eta_min)
        if self.step_gamma is not None:
            training["step_gamma"] = repr(self.step_gamma)
        if self.step_every is not None:
            training["step_every"] = str(self.step_every)
        if self.stages:
            training["stages"] = ", ".join(f"{int(e)}:{lr!r}:{eps!r}"
                                           for e, lr, eps in self.stages)
        cp["training"] = training
        cp["output"] = {"log_every": str(self.log_every),
                        "weight_log_every": str(self.weight_log_every),
                        "reference": self.reference,
                        "snapshot_times": ", ".join(repr(t) for t in self.snapshot_times)}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()


def _get(section, key, cast, default=None, required=False):
    if key not in section:
        if required:
            raise ConfigError(f"missing required key '{key}'")
        return default
    raw = section[key]
    try:
        if cast is bool:
            return _BOOLS[raw.strip().lower()]
        return cast(raw)
    except (ValueError, KeyError):
        raise ConfigError(f"key '{key}': cannot parse {raw!r}") from None


def parse_config_text(text: str) -> ExperimentConfig:
    cp = configparser.ConfigParser()
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None

    for sec in cp.sections():
        if sec not in _SCHEMA:
            raise ConfigError(f"unknown section [{sec}]")
        for key in cp[sec]:
            if key not in _SCHEMA[sec]:
                raise ConfigError(f"unknown key '{key}' in section [{sec}]")
    for sec in ("problem", "network", "training"):
        if sec not in cp:
            raise ConfigError(f"missing section [{sec}]")

    prob = cp["problem"]
    kind = _get(prob, "kind", str, required=True)
    if kind not in _PROBLEM_PARAM_KEYS:
        raise ConfigError(f"unknown problem kind {kind!r}")
    for key in ("diffusion", "reaction", "eta", "mu", "alpha", "eps1"):
        if key in prob and key not in _PROBLEM_PARAM_KEYS[kind]:
            raise ConfigError(f"key '{key}' does not apply to problem {kind!r}")
    params = {k: _get(prob, k, float) for k in _PROBLEM_PARAM_KEYS[kind] if k in prob}
    pk_defaults = {"allen_cahn": (1.0, -1.0, 1.0), "kdv": (1.0, -1.0, 1.0),
                   "petrov_kudrin": (4.75, 0.0, 5.0)}[kind]
    box = DomainBox(_get(prob, "t_final", float, pk_defaults[0]),
                    _get(prob, "x1", float, pk_defaults[1]),
                    _get(prob, "x2", float, pk_defaults[2]),
                    _get(prob, "n_t", int, required=True),
                    _get(prob, "n_x", int, required=True))

    netsec = cp["network"]
    net_type = _get(netsec, "type", str, "mlp")
    if net_type not in ("mlp", "paf_kdv"):
        raise ConfigError(f"unknown network type {net_type!r}")

    loss_sec = cp["loss"] if "loss" in cp else {}
    loss = LossConfig(mode=_get(loss_sec, "mode", str, "reformulated"),
                      lambda_ic=_get(loss_sec, "lambda_ic", float, 1.0),
                      lambda_bc=_get(loss_sec, "lambda_bc", float, 1.0),
                      lambda_r=_get(loss_sec, "lambda_r", float, 1.0),
                      include_cross_term=_get(loss_sec, "cross_term", bool, True),
                      log_transform=_get(loss_sec, "log_transform", bool, False),
                      delta_rule=_get(loss_sec, "delta_rule", str, "mesh"))

    wsec = cp["weights"] if "weights" in cp else {}
    scheme = _get(wsec, "scheme", str, "unweighted")
    if scheme not in SCHEMES:
        raise ConfigError(f"unknown weighting scheme {scheme!r}")

    tsec = cp["training"]
    stages_raw = _get(tsec, "stages", str)
    if stages_raw and "epochs" in tsec:
        raise ConfigError("give either 'epochs' or 'stages', not both")
    stages = None
    if stages_raw:
        stages = []
        for part in stages_raw.split(","):
            bits = part.strip().split(":")
            if len(bits) != 3:
                raise ConfigError("stages entries must be epochs:eta_start:eps_init")
            stages.append((int(bits[0]), float(bits[1]), float(bits[2])))
        stages = tuple(stages)

    osec = cp["output"] if "output" in cp else {}
    snap_raw = _get(osec, "snapshot_times", str, "")
    snapshot_times = tuple(float(v) for v in snap_raw.split(",") if v.strip()) \
        if snap_raw.strip() else ()

    cfg = ExperimentConfig(
        problem_kind=kind,
        problem_params=params,
        box=box,
        network_type=net_type,
        hidden_layers=_get(netsec, "hidden_layers", int, 4),
        width=_get(netsec, "width", int, 64),
        activation=_get(netsec, "activation", str, "tanh"),
        embedding_m=_get(netsec, "embedding_m", int, 0),
        embedding_period=_get(netsec, "embedding_period", float,
                              box.x2 - box.x1),
        seed=_get(netsec, "seed", int, 0),
        loss=loss,
        scheme=scheme,
        eps_init=_get(wsec, "eps_init", float, 1e-3),
        delta_w=_get(wsec, "delta_w", float, 0.99),
        m_eps=_get(wsec, "m_eps", float, 2.0),
        algorithm=_get(tsec, "algorithm", int, 1),
        epochs=_get(tsec, "epochs", int, required=stages is None),
        scheduler=_get(tsec, "scheduler", str, "constant"),
        eta_start=_get(tsec, "eta_start", float, 1e-3),
        eta_min=_get(tsec, "eta_min", float),
        step_gamma=_get(tsec, "step_gamma", float),
        step_every=_get(tsec, "step_every", int),
        stages=stages,
        log_every=_get(osec, "log_every", int, 100),
        weight_log_every=_get(osec, "weight_log_every", int, 0),
        reference=_get(osec, "reference", str, "auto"),
        snapshot_times=snapshot_times,
    )
    _validate(cfg)
    return cfg


def _validate(cfg: ExperimentConfig) -> None:
    try:
        problem = cfg.make_problem()
        cfg.network_spec()
        cfg.stage_specs()
        cfg.to_run()
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from None
    if cfg.algorithm == 2 and not problem.periodic:
        raise ConfigError("the spatio-temporal algorithm needs a periodic problem")
    if cfg.epochs is not None and cfg.epochs < 0:
        raise ConfigError("epochs must be non-negative")


def load_config(path) -> ExperimentConfig:
    try:
        with open(path) as f:
            text = f.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    return parse_config_text(text)
