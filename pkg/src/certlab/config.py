"""Experiment configs in INI form and the named presets."""
from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .training import HYBRID, TrainConfig, TrainingError


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    dataset: str = "synth"
    dims: tuple = (16, 20, 20, 2)
    out_dir: str = "runs/train"
    seed: int = 0
    n_train: int = 0   # 0 = whole split

    def validate(self) -> "ExperimentConfig":
        if len(self.dims) < 2 or any(d < 1 for d in self.dims):
            raise ConfigError(f"bad dims {self.dims}")
        try:
            self.train.validate()
        except TrainingError as e:
            raise ConfigError(str(e)) from None
        return self


_BOOL = {"elision", "clip"}
_INT = {"epochs", "warmup", "rampup", "lr_halve_every", "batch_size", "seed"}
_STR = {"kappa_mixing", "hybrid_blend"}


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def dumps_config(cfg: ExperimentConfig) -> str:
    cp = configparser.ConfigParser()
    cp["experiment"] = {"dataset": cfg.dataset, "dims": ",".join(map(str, cfg.dims)),
                        "out_dir": cfg.out_dir, "seed": str(cfg.seed), "n_train": str(cfg.n_train)}
    t = cfg.train
    sec = {}
    for f in fields(TrainConfig):
        v = getattr(t, f.name)
        if f.name == "kind":
            sec["kind"] = v if v == HYBRID else v.value
        elif f.name == "lr_milestones":
            sec[f.name] = ", ".join(f"{e}:{_fmt(x)}" for e, x in v)
        else:
            sec[f.name] = _fmt(v)
    cp["train"] = sec
    lines = []
    for name in cp.sections():
        lines.append(f"[{name}]")
        lines += [f"{k} = {v}" for k, v in cp[name].items()]
        lines.append("")
    return "\n".join(lines)


def save_config(cfg: ExperimentConfig, path) -> None:
    Path(path).write_text(dumps_config(cfg))


def loads_config(text: str) -> ExperimentConfig:
    cp = configparser.ConfigParser()
    try:
        cp.read_string(text)
    except configparser.Error as e:
        raise ConfigError(f"config parse error: {e}") from None
    kw = {}
    if cp.has_section("train"):
        names = {f.name for f in fields(TrainConfig)}
        for k, v in cp["train"].items():
            if k not in names:
                raise ConfigError(f"unknown train key {k!r}")
            try:
                if k == "kind" or k in _STR:
                    kw[k] = v.strip()
                elif k in _BOOL:
                    kw[k] = cp["train"].getboolean(k)
                elif k in _INT:
                    kw[k] = int(v)
                elif k == "lr_milestones":
                    kw[k] = tuple((int(a), float(b)) for a, b in
                                  (p.split(":") for p in v.split(",") if p.strip()))
                else:
                    kw[k] = float(v)
            except ValueError as e:
                raise ConfigError(f"bad value for {k!r}: {v!r} ({e})") from None
    try:
        train = TrainConfig(**kw)
    except Exception as e:  # unknown kind and friends
        raise ConfigError(str(e)) from None
    ex = cp["experiment"] if cp.has_section("experiment") else {}
    allowed = {"dataset", "dims", "out_dir", "seed", "n_train"}
    extra = set(ex) - allowed
    if extra:
        raise ConfigError(f"unknown experiment keys {sorted(extra)}")
    try:
        cfg = ExperimentConfig(
            train=train,
            dataset=ex.get("dataset", "synth"),
            dims=tuple(int(d) for d in ex.get("dims", "16,20,20,2").split(",")),
            out_dir=ex.get("out_dir", "runs/train"),
            seed=int(ex.get("seed", "0")),
            n_train=int(ex.get("n_train", "0")),
        )
    except ValueError as e:
        raise ConfigError(str(e)) from None
    return cfg.validate()


def load_config(path) -> ExperimentConfig:
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(str(p))
    return loads_config(p.read_text())


# -- presets --------------------------------------------------------------------------
# Only values stated in the text are fixed; the per-model tuned table (N_w, N_r,
# kappa_end, lambda, alpha) is not available, so those fields take plain defaults.

TOY_KINDS = ["Box", "hBox", "DeepZ", "CROWN", "CROWN-IBP(R)", "Triangle", "Parallelogram"]
MNIST_KINDS = ["Box", "hBox", "DeepZ", "CROWN", "CROWN-IBP(R)", "CROWN-IBP"]


def _slug(kind: str) -> str:
    return kind.lower().replace("(", "").replace(")", "").replace("-", "")


def presets() -> dict[str, ExperimentConfig]:
    out = {}
    for k in TOY_KINDS:
        out[f"toy-{_slug(k)}"] = ExperimentConfig(
            TrainConfig(kind=k, eps_train=0.3, eps_test=0.3, epochs=110, warmup=10, rampup=50,
                        batch_size=64, clip=False),
            dataset="toy", dims=(16, 20, 20, 10), out_dir=f"runs/toy-{_slug(k)}")
    for k in MNIST_KINDS:
        for sched, extra in (("milestones", {"lr_milestones": ((130, 0.1), (190, 0.1))}),
                             ("steps", {"lr_halve_every": 20})):
            for eps in (0.1, 0.2, 0.3, 0.4):
                name = f"mnist-fc-{_slug(k)}-{sched}-eps{eps}"
                out[name] = ExperimentConfig(
                    TrainConfig(kind=k, eps_train=eps, eps_test=min(eps, 0.3), epochs=200,
                                warmup=10, rampup=50, batch_size=100, **extra),
                    dataset="mnist", dims=(784, 100, 100, 10), out_dir=f"runs/{name}")
    out["desk-box"] = ExperimentConfig(
        TrainConfig(kind="Box", eps_train=0.1, eps_test=0.1, epochs=30, warmup=5, rampup=15,
                    batch_size=50),
        dataset="mnist", dims=(784, 100, 100, 10), out_dir="runs/desk-box", n_train=2000)
    out["natural-synth"] = ExperimentConfig(
        TrainConfig(kind="Box", eps_train=0.0, eps_test=0.0, epochs=10, warmup=10, rampup=0,
                    kappa_end=1.0, lr=1e-2, batch_size=64),
        dataset="synth", dims=(16, 20, 2), out_dir="runs/natural-synth")
    return out


def get_preset(name: str, seed: int | None = None) -> ExperimentConfig:
    table = presets()
    if name not in table:
        raise ConfigError(f"unknown preset {name!r}")
    cfg = table[name]
    if seed is not None:
        cfg = replace(cfg, seed=seed, train=replace(cfg.train, seed=seed))
    return cfg
