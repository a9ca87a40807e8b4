"""Seeded phenomenological video of a horizontal boiling channel.

Flow runs along +x. Liquid is bright, vapor dark; every shape is drawn with
a soft (about one pixel) edge so that sub-pixel motion still changes pixel
intensity. Nothing here is a physical simulation; the scenes only need to
look and move differently per regime.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .emulator import FrameSequence
from .errors import InvalidParams
from .regimes import FlowRegime

LIQUID = 200.0
VAPOR = 60.0


@dataclass(frozen=True)
class SynthParams:
    regime: FlowRegime
    width: int = 64
    height: int = 32
    frame_count: int = 200
    fps: float = 1000.0
    flow_speed: float = 1.5
    feature_density: float = 0.5
    seed: int = 0

    def validate(self) -> None:
        if self.width < 8 or self.height < 8:
            raise InvalidParams("width and height must be at least 8 pixels")
        if self.frame_count < 1:
            raise InvalidParams("frame_count must be positive")
        if self.fps <= 0:
            raise InvalidParams("fps must be positive")
        if self.flow_speed < 0:
            raise InvalidParams("flow_speed must be non-negative")
        if not 0 < self.feature_density <= 1:
            raise InvalidParams("feature_density must lie in (0, 1]")
        if self.seed < 0:
            raise InvalidParams("seed must be unsigned")

    @property
    def dt_us(self) -> int:
        return max(1, int(round(1e6 / self.fps)))


def _soft(signed_dist, softness=0.6):
    """Vapor fraction for a signed distance (positive inside the vapor)."""
    return 0.5 * (1.0 + np.tanh(signed_dist / softness))


class _Scene:
    """One regime's evolving state; ``render(i)`` draws frame ``i``."""

    def __init__(self, p: SynthParams, rng: np.random.Generator):
        self.p = p
        self.rng = rng
        self.yy, self.xx = np.mgrid[0:p.height, 0:p.width].astype(np.float64)
        # static illumination falloff; does not by itself create events
        self.shade = 1.0 - 0.15 * rng.random() * (self.xx / p.width)

    def compose(self, vapor_fraction, i):
        img = LIQUID - (LIQUID - VAPOR) * np.clip(vapor_fraction, 0.0, 1.0)
        return img * self.shade


class _Bubbles(_Scene):
    elongated = False

    def __init__(self, p, rng):
        super().__init__(p, rng)
        area = p.width * p.height
        if self.elongated:
            n = max(2, int(round(p.feature_density * area / 160)))
            centers = max(1, n // 3)
            cx = rng.uniform(0, p.width, centers)
            cy = rng.uniform(0.2, 0.42, centers) * p.height
            which = rng.integers(0, centers, n)
            self.x = (cx[which] + rng.normal(0, 5, n)) % p.width
            self.y = np.clip(cy[which] + rng.normal(0, 1.5, n), 2, p.height * 0.55)
            self.a = rng.uniform(5.0, 9.0, n)
            self.b = rng.uniform(1.8, 3.0, n)
        else:
            n = max(2, int(round(p.feature_density * area / 70)))
            self.x = rng.uniform(0, p.width, n)
            self.y = rng.uniform(3, p.height - 3, n)
            self.a = rng.uniform(1.4, 2.8, n)
            self.b = self.a.copy()
        self.vx = p.flow_speed * rng.uniform(0.8, 1.25, n)
        self.vy_scale = 0.15 * p.flow_speed

    def render(self, i):
        p = self.p
        frac = np.zeros_like(self.xx)
        span = p.width + 2 * 10.0
        for x, y, a, b in zip(self.x, self.y, self.a, self.b):
            # periodic in x over a span wider than the frame so bubbles exit and re-enter
            dx = (self.xx - x + 10.0) % span - 10.0
            dx = np.where(dx > span / 2, dx - span, dx)
            r = np.sqrt((dx / a) ** 2 + ((self.yy - y) / b) ** 2)
            frac = np.maximum(frac, _soft((1.0 - r) * b))
        self.x = self.x + self.vx
        self.y = np.clip(self.y + self.rng.normal(0, self.vy_scale, self.y.size), 2, p.height - 3)
        return self.compose(frac, i)


class _Elongated(_Bubbles):
    elongated = True


class _Slug(_Scene):
    def __init__(self, p, rng):
        super().__init__(p, rng)
        self.film = rng.uniform(1.5, 3.0)
        self.plug = rng.uniform(0.35, 0.7) * p.width * (0.5 + p.feature_density)
        self.gap = rng.uniform(0.3, 0.6) * p.width
        self.offset = rng.uniform(0, self.plug + self.gap)
        self.speed = 1.3 * p.flow_speed

    def render(self, i):
        p = self.p
        period = self.plug + self.gap
        half_h = p.height / 2 - self.film
        u = (self.xx - self.offset - self.speed * i) % period
        cy = np.abs(self.yy - (p.height - 1) / 2)
        lo, hi = half_h, max(half_h, self.plug - half_h)
        # stadium signed distance; the plug repeats every period so check both neighbours
        dist = np.full_like(u, -np.inf)
        for shift in (0.0, period, -period):
            along = np.clip(u - shift, lo, hi)
            dist = np.maximum(dist, half_h - np.hypot(u - shift - along, cy))
        return self.compose(_soft(dist), i)


class _Stratified(_Scene):
    wavy = False

    def __init__(self, p, rng):
        super().__init__(p, rng)
        self.level = rng.uniform(0.4, 0.6) * p.height
        self.tilt = rng.uniform(-0.02, 0.02)
        self.phase = rng.uniform(0, 2 * np.pi)
        if self.wavy:
            self.amp = (1.2 + 2.0 * p.feature_density) * rng.uniform(0.8, 1.2)
            self.lam = rng.uniform(12.0, 26.0)
            self.speed = p.flow_speed
        else:
            self.amp = 1.0 + rng.uniform(0, 0.8)
            self.omega = 2 * np.pi / rng.uniform(150.0, 260.0)

    def interface(self, i):
        base = self.level + self.tilt * (self.xx - self.p.width / 2)
        if self.wavy:
            return base + self.amp * np.sin(2 * np.pi * (self.xx - self.speed * i) / self.lam + self.phase)
        # slow bulk drift; its rate scales with flow speed so a still flow is a still image
        return base + self.amp * np.sin(self.omega * self.p.flow_speed * i + self.phase)

    def render(self, i):
        # vapor sits above the interface (smaller y)
        return self.compose(_soft(self.interface(i) - self.yy, 0.8), i)


class _Wavy(_Stratified):
    wavy = True


class _Annular(_Scene):
    def __init__(self, p, rng):
        super().__init__(p, rng)
        self.film = rng.uniform(2.0, 3.2)
        self.amp = 0.6 + 0.8 * p.feature_density
        self.lam = rng.uniform(6.0, 12.0)
        self.speed = 2.0 * p.flow_speed
        self.phase = rng.uniform(0, 2 * np.pi, 2)

    def render(self, i):
        p = self.p
        arg = 2 * np.pi * (self.xx - self.speed * i) / self.lam
        top = self.film + self.amp * np.sin(arg + self.phase[0])
        bottom = (p.height - 1) - self.film - self.amp * np.sin(1.3 * arg + self.phase[1])
        # dark liquid films hug both walls around a bright rippling core
        film = np.maximum(_soft(top - self.yy), _soft(self.yy - bottom))
        core = 0.12 * np.sin(arg * 0.5 + self.phase[1]) * (1 - film)
        return self.compose(film + core + 0.12, i)


_SCENES = {
    FlowRegime.B: _Bubbles,
    FlowRegime.EB: _Elongated,
    FlowRegime.S: _Slug,
    FlowRegime.SS: _Stratified,
    FlowRegime.SW: _Wavy,
    FlowRegime.A: _Annular,
}


def synth_regime(params: SynthParams) -> tuple[FrameSequence, list[FlowRegime]]:
    """Render ``params.frame_count`` uint8 frames of the requested regime.

    Regime U switches at random among the six steady regimes every few
    frames; every frame is still labelled U.
    """
    params.validate()
    regime = FlowRegime.parse(params.regime)
    rng = np.random.default_rng([params.seed, int(regime)])
    frames = np.empty((params.frame_count, params.height, params.width), dtype=np.uint8)
    if regime is FlowRegime.U:
        scenes = {r: cls(params, np.random.default_rng([params.seed, int(regime), int(r)]))
                  for r, cls in _SCENES.items()}
        kinds = list(scenes)
        current = kinds[rng.integers(len(kinds))]
        left = int(rng.integers(1, 4))
        for i in range(params.frame_count):
            if left == 0:
                choices = [k for k in kinds if k != current]
                current = choices[rng.integers(len(choices))]
                left = int(rng.integers(1, 4))
            frames[i] = np.clip(np.rint(scenes[current].render(i)), 0, 255)
            left -= 1
    else:
        scene = _SCENES[regime](params, rng)
        for i in range(params.frame_count):
            frames[i] = np.clip(np.rint(scene.render(i)), 0, 255)
    labels = [regime] * params.frame_count
    return FrameSequence(frames, params.dt_us, 0), labels
