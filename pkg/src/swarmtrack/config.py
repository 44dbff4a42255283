"""Flat key-value run configuration with file and CLI override support.

Config files hold one ``key = value`` per line (``#`` comments allowed);
CLI ``--set key=value`` flags override file values.  Unknown keys are
rejected so typos fail loudly.  ``swarmtrack <cmd> --print-config`` dumps
the effective configuration.
"""

from __future__ import annotations

from dataclasses import dataclass, fields


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    # windows and horizons
    history_len: int = 8
    horizon: int = 12
    window: int = 16
    # model sizes (desk-scale defaults; larger scales stay configurable)
    feature_dim: int = 16
    heads: int = 4
    embed_dim: int = 8
    neighbors: int = 2
    neighbor_radius: float = 256.0
    coord_scale: float = 128.0
    # detector / fusion
    conf_thresh: float = 0.01
    nms_iou: float = 0.1
    reg_weight: float = 5.0
    num_classes: int = 1
    sigma_splat: float = 2.0
    fusion_heads: int = 4
    # tracker
    high_thresh: float = 0.6
    low_iou_gate: float = 0.3
    motion_scale: float = 40.0
    min_similarity: float = 0.05
    max_age: int = 16
    # optimization
    lr: float = 0.002
    momentum: float = 0.9
    weight_decay: float = 0.0005
    # scene generation
    scene_frames: int = 100
    image_size: int = 128
    n_uavs: int = 6
    trajectory: str = "circle"
    speed: float = 2.0
    formation_radius: float = 36.0
    box_min: float = 18.0
    box_max: float = 26.0
    grid_channels: int = 8
    render_sigma: float = 1.0
    background_noise: float = 0.02
    p_miss: float = 0.0
    p_false: float = 0.0
    box_jitter: float = 0.0
    seed: int = 0

    def scene_spec(self):
        """Build a SceneSpec from the scene-related keys."""
        import numpy as np

        from .simulator import FormationSpec, SceneSpec

        n = self.n_uavs
        angles = np.linspace(0.0, 2.0 * np.pi, n, endpoint=False)
        offsets = self.formation_radius * 0.5 * np.stack(
            [np.cos(angles), np.sin(angles)], axis=1
        )
        center = (self.image_size / 2.0, self.image_size / 2.0)
        kwargs = dict(
            offsets=offsets,
            trajectory=self.trajectory,
            speed=self.speed,
            center=center,
            radius=self.formation_radius,
        )
        if self.trajectory == "formation-transition":
            kwargs["offsets_end"] = offsets[::-1].copy()
            kwargs["transition"] = (
                self.scene_frames // 4,
                3 * self.scene_frames // 4,
            )
        formation = FormationSpec(**kwargs)
        return SceneSpec(
            formation=formation,
            frames=self.scene_frames,
            image_size=self.image_size,
            box_size_range=(self.box_min, self.box_max),
            embed_dim=self.embed_dim,
            grid_channels=self.grid_channels,
            render_sigma=self.render_sigma,
            background_noise=self.background_noise,
            p_miss=self.p_miss,
            p_false=self.p_false,
            box_jitter=self.box_jitter,
        )


_FIELDS = {f.name: f.type for f in fields(RunConfig)}


def _coerce(key, raw):
    kind = _FIELDS[key]
    raw = raw.strip()
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {raw!r}") from exc


def parse_config_file(path) -> dict:
    values = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, 1):
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            if "=" not in text:
                raise ConfigError(f"{path}:{line_no}: expected 'key = value'")
            key, raw = (part.strip() for part in text.split("=", 1))
            if key not in _FIELDS:
                raise ConfigError(f"{path}:{line_no}: unknown key {key!r}")
            values[key] = _coerce(key, raw)
    return values


def build_config(config_path=None, overrides=()) -> RunConfig:
    values = {}
    if config_path:
        values.update(parse_config_file(config_path))
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override must look like key=value, got {item!r}")
        key, raw = (part.strip() for part in item.split("=", 1))
        if key not in _FIELDS:
            raise ConfigError(f"unknown config key {key!r}")
        values[key] = _coerce(key, raw)
    return RunConfig(**values)


def dump_config(cfg: RunConfig) -> str:
    lines = [f"{f.name} = {getattr(cfg, f.name)}" for f in fields(RunConfig)]
    return "\n".join(lines)
