"""Flat key=value configuration with a typed schema and CLI overrides.

A config file holds one ``key = value`` pair per line (``#`` comments and
blank lines ignored).  Every key is declared in SCHEMA below with its type
and default; unknown keys are rejected with the full list of valid keys.
Booleans accept on/off, true/false, yes/no, 1/0.  List-valued keys take
comma-separated numbers.
"""

from __future__ import annotations

from .errors import ConfigError
from .model import ModelConfig, ablation_config
from .synth import SyntheticHandConfig
from .training import AugmentationConfig, TrainConfig

# key -> (type, default); types: int, float, bool, str, ints, floats
SCHEMA: dict[str, tuple[str, object]] = {
    "seed": ("int", 0),
    "out_dir": ("str", "runs/default"),
    "data.dir": ("str", ""),
    "data.synth_count": ("int", 0),
    "data.val_dir": ("str", ""),
    "figures": ("bool", True),

    "model.joints": ("int", 21),
    "model.token_dim": ("int", 128),
    "model.global_dim": ("int", 512),
    "model.global_mid": ("int", 256),
    "model.bil_hidden": ("ints", (512, 256)),
    "model.num_points": ("int", 1024),
    "model.superpoints": ("int", 256),
    "model.knn_k": ("int", 32),
    "model.k_local": ("int", 16),
    "model.point_widths": ("ints", (64, 128)),
    "model.image_size": ("int", 128),
    "model.depth_widths": ("ints", (32, 64, 64)),
    "model.rgb_widths": ("ints", (32, 64, 64)),
    "model.rgb": ("bool", True),
    "model.state_dim": ("int", 16),
    "model.stacks": ("int", 3),
    "model.ssm_type": ("str", "correspondence"),
    "model.local_inject": ("bool", True),
    "model.local_filter": ("bool", True),
    "model.corr_full": ("bool", False),
    "model.gated_tokens": ("bool", False),
    "model.residual": ("bool", False),
    "model.share_coord_head": ("bool", True),
    "model.ablation": ("str", ""),   # preset name; overrides the wiring flags

    "train.epochs": ("int", 10),
    "train.batch_size": ("int", 8),
    "train.lr": ("float", 0.001),
    "train.beta1": ("float", 0.5),
    "train.beta2": ("float", 0.999),
    "train.weight_decay": ("float", 0.01),
    "train.lr_decay_epoch": ("int", -1),
    "train.lr_decay_factor": ("float", 0.1),
    "train.augment": ("bool", True),
    "train.rotation_deg": ("floats", (-180.0, 180.0)),
    "train.scale": ("floats", (0.9, 1.1)),
    "train.translation_mm": ("floats", (-10.0, 10.0)),
    "train.per_joint_norm_loss": ("bool", False),
    "train.max_steps": ("int", -1),
    "train.target_mke_mm": ("float", -1.0),

    "gen.count": ("int", 64),
    "gen.occluder": ("str", "none"),
    "gen.density": ("float", 1.5),
    "gen.image_size": ("int", 128),
    "gen.with_rgb": ("bool", True),
    "gen.tilt_deg": ("floats", (-35.0, 35.0)),
    "gen.mcp_flex_deg": ("floats", (-10.0, 65.0)),

    "eval.checkpoint": ("str", ""),
    "bench.frames": ("int", 100),
}


def _parse_value(key: str, kind: str, raw: str):
    raw = raw.strip()
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "bool":
            low = raw.lower()
            if low in ("on", "true", "yes", "1"):
                return True
            if low in ("off", "false", "no", "0"):
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        if kind == "ints":
            return tuple(int(v) for v in raw.split(","))
        if kind == "floats":
            return tuple(float(v) for v in raw.split(","))
        return raw
    except ValueError as exc:
        raise ConfigError(f"invalid value for {key}: {exc}") from exc


def default_config() -> dict:
    return {k: v for k, (_, v) in SCHEMA.items()}


def _set_key(cfg: dict, key: str, raw: str) -> None:
    key = key.strip()
    if key not in SCHEMA:
        valid = ", ".join(sorted(SCHEMA))
        raise ConfigError(f"unknown config key {key!r}; valid keys: {valid}")
    cfg[key] = _parse_value(key, SCHEMA[key][0], raw)


def parse_config(path: str | None = None, overrides: list[str] = ()) -> dict:
    """Defaults, then the file (if any), then ``key=value`` overrides."""
    cfg = default_config()
    if path:
        with open(path) as f:
            for lineno, line in enumerate(f, 1):
                text = line.split("#", 1)[0].strip()
                if not text:
                    continue
                if "=" not in text:
                    raise ConfigError(f"{path}:{lineno}: expected key = value, "
                                      f"got {line.rstrip()!r}")
                key, raw = text.split("=", 1)
                _set_key(cfg, key, raw)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, raw = item.split("=", 1)
        _set_key(cfg, key, raw)
    return cfg


def write_config(cfg: dict, path: str) -> None:
    with open(path, "w") as f:
        for key in sorted(cfg):
            val = cfg[key]
            if isinstance(val, tuple):
                val = ",".join(str(v) for v in val)
            elif isinstance(val, bool):
                val = "on" if val else "off"
            f.write(f"{key} = {val}\n")


def build_model_config(cfg: dict) -> ModelConfig:
    mc = ModelConfig(
        num_joints=cfg["model.joints"],
        token_dim=cfg["model.token_dim"],
        global_dim=cfg["model.global_dim"],
        global_mid=cfg["model.global_mid"],
        bil_hidden=tuple(cfg["model.bil_hidden"]),
        num_points=cfg["model.num_points"],
        num_superpoints=cfg["model.superpoints"],
        knn_k=cfg["model.knn_k"],
        k_local=cfg["model.k_local"],
        point_widths=tuple(cfg["model.point_widths"]),
        image_size=cfg["model.image_size"],
        depth_widths=tuple(cfg["model.depth_widths"]),
        rgb_widths=tuple(cfg["model.rgb_widths"]),
        use_rgb=cfg["model.rgb"],
        state_dim=cfg["model.state_dim"],
        stacks=cfg["model.stacks"],
        ssm_type=cfg["model.ssm_type"],
        local_inject=cfg["model.local_inject"],
        local_filter=cfg["model.local_filter"],
        corr_full=cfg["model.corr_full"],
        gated_tokens=cfg["model.gated_tokens"],
        residual=cfg["model.residual"],
        share_coord_head=cfg["model.share_coord_head"],
        seed=cfg["seed"],
    )
    if len(mc.bil_hidden) != 2:
        raise ConfigError("model.bil_hidden needs exactly two widths")
    if cfg["model.ablation"]:
        mc = ablation_config(mc, cfg["model.ablation"])
    return mc


def build_train_config(cfg: dict) -> TrainConfig:
    aug = AugmentationConfig(
        rotation_deg=tuple(cfg["train.rotation_deg"]),
        scale=tuple(cfg["train.scale"]),
        translation_mm=tuple(cfg["train.translation_mm"]),
        seed=cfg["seed"])
    return TrainConfig(
        epochs=cfg["train.epochs"],
        batch_size=cfg["train.batch_size"],
        lr=cfg["train.lr"],
        beta1=cfg["train.beta1"],
        beta2=cfg["train.beta2"],
        weight_decay=cfg["train.weight_decay"],
        lr_decay_epoch=cfg["train.lr_decay_epoch"],
        lr_decay_factor=cfg["train.lr_decay_factor"],
        augment=cfg["train.augment"],
        aug=aug,
        per_joint_norm_loss=cfg["train.per_joint_norm_loss"],
        max_steps=cfg["train.max_steps"],
        target_mke_mm=cfg["train.target_mke_mm"],
        seed=cfg["seed"])


def build_synth_config(cfg: dict) -> SyntheticHandConfig:
    return SyntheticHandConfig(
        occluder=cfg["gen.occluder"],
        density=cfg["gen.density"],
        image_size=cfg["gen.image_size"],
        with_rgb=cfg["gen.with_rgb"],
        tilt_deg=tuple(cfg["gen.tilt_deg"]),
        mcp_flex_deg=tuple(cfg["gen.mcp_flex_deg"]),
        seed=cfg["seed"])
