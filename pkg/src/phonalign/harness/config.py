"""Pipeline configuration and its ``key = value`` file format.

Sections map onto the sub-configs::

    [pipeline]   n_seeds, k, beams, seed, disentangle, one_hot, paths ...
    [synth]      SynthSpec fields
    [speech]     SpeechTrainConfig fields
    [text]       TextTrainConfig fields
    [align]      AlignConfig fields
    [rescore]    RescoreConfig fields

Tuples are written comma-separated.  Unknown keys are an error.
"""
from __future__ import annotations

import configparser
import dataclasses
import json
import os
from dataclasses import dataclass, field, fields, replace

from ..align import AlignConfig
from ..lm import RescoreConfig
from ..speech import SpeechTrainConfig
from ..text import TextTrainConfig
from .synth import SynthSpec

# Desk-scale sub-configs: full-sized networks train far too slowly on a
# 400-token corpus in numpy, so the harness uses smaller layers and a larger
# step size.  The module-level defaults keep the full sizes.
DESK_SPEECH = SpeechTrainConfig(enc_hidden=64, dec_hidden=(128, 64), disc_hidden=64, lr=1e-3,
                                epochs=30, adversarial_weight=0.2)
DESK_TEXT = TextTrainConfig(enc_hidden=64, dec_hidden=(128, 64), lr=1e-3, epochs=300)
DESK_ALIGN = AlignConfig(k=12, iterations=20000)


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class PipelineConfig:
    out_dir: str = "phonalign_out"
    synth: SynthSpec | None = field(default_factory=SynthSpec)
    audio_dir: str | None = None
    manifest: str | None = None
    lexicon: str | None = None
    spe_table: str | None = None
    transcripts: str | None = None
    n_seeds: int = 20
    beams: tuple = (1, 3, 10, 50)
    disentangle: bool = True
    one_hot: bool = False
    seed: int = 0
    speech: SpeechTrainConfig = DESK_SPEECH
    text: TextTrainConfig = DESK_TEXT
    align: AlignConfig = DESK_ALIGN
    rescore: RescoreConfig = field(default_factory=RescoreConfig)

    def __post_init__(self):
        if self.n_seeds < 1:
            raise ConfigError("n_seeds must be >= 1")
        if any(b < 1 for b in self.beams):
            raise ConfigError("beam widths must be >= 1")
        if self.synth is None and not (self.audio_dir and self.manifest and self.lexicon):
            raise ConfigError("real-audio mode needs audio_dir, manifest and lexicon")

    @property
    def k(self):
        return self.align.k

    def check_paths(self):
        """Every referenced input file must exist when a run starts."""
        for name in ("audio_dir", "manifest", "lexicon", "spe_table", "transcripts"):
            p = getattr(self, name)
            if p is not None and not os.path.exists(p):
                raise ConfigError(f"{name} path does not exist: {p}")

    def effective_speech(self):
        return replace(self.speech, disentangle=self.disentangle, seed=self.seed)

    def effective_text(self):
        return replace(self.text, one_hot=self.one_hot, seed=self.seed)

    def effective_align(self):
        return replace(self.align, seed=self.seed)

    def to_dict(self):
        d = dataclasses.asdict(self)
        return json.loads(json.dumps(d))


_SECTIONS = {"synth": SynthSpec, "speech": SpeechTrainConfig, "text": TextTrainConfig,
             "align": AlignConfig, "rescore": RescoreConfig}


def _coerce(raw, default, where):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low not in ("true", "false", "yes", "no", "1", "0", "on", "off"):
                raise ValueError(raw)
            return low in ("true", "yes", "1", "on")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            items = [s.strip() for s in raw.split(",") if s.strip()]
            kind = type(default[0]) if default else int
            return tuple(kind(s) for s in items)
    except ValueError:
        raise ConfigError(f"{where}: cannot parse {raw!r} as {type(default).__name__}") from None
    if raw.lower() in ("", "none"):
        return None
    return raw


def _update(obj, items, section):
    known = {f.name: getattr(obj, f.name) for f in fields(obj)}
    kw = {}
    for key, raw in items:
        if key not in known:
            raise ConfigError(f"[{section}] unknown key {key!r}")
        default = known[key]
        kw[key] = _coerce(raw, "" if default is None else default, f"[{section}] {key}")
    return replace(obj, **kw)


def load_config(path=None, seed=None, out_dir=None, base=None):
    """Read a config file over the desk defaults; ``seed``/``out_dir`` override it."""
    cfg = base or PipelineConfig()
    if path is not None:
        cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
        cp.optionxform = str
        if not cp.read(path, encoding="utf-8"):
            raise ConfigError(f"cannot read config file {path}")
        for section in cp.sections():
            if section not in _SECTIONS and section != "pipeline":
                raise ConfigError(f"unknown section [{section}]")
        subs = {}
        for name, cls in _SECTIONS.items():
            if cp.has_section(name):
                current = getattr(cfg, name) or cls()
                subs[name] = _update(current, cp.items(name), name)
        cfg = replace(cfg, **subs)
        if cp.has_section("pipeline"):
            items = dict(cp.items("pipeline"))
            if items.pop("mode", "synth").strip() == "audio":
                cfg = replace(cfg, synth=None, **{k: items.pop(k) for k in
                                                 ("audio_dir", "manifest", "lexicon") if k in items})
            cfg = _update(cfg, items.items(), "pipeline")
    over = {}
    if seed is not None:
        over["seed"] = int(seed)
    if out_dir is not None:
        over["out_dir"] = out_dir
    return replace(cfg, **over) if over else cfg


def format_config(cfg):
    """Inverse of :func:`load_config` (output directory included)."""
    def val(v):
        if isinstance(v, tuple):
            return ",".join(str(x) for x in v)
        return "none" if v is None else str(v)

    lines = ["[pipeline]"]
    if cfg.synth is None:
        lines.append("mode = audio")
    for f in fields(cfg):
        if f.name in _SECTIONS:
            continue
        lines.append(f"{f.name} = {val(getattr(cfg, f.name))}")
    for name in _SECTIONS:
        sub = getattr(cfg, name)
        if sub is None:
            continue
        lines += ["", f"[{name}]"] + [f"{f.name} = {val(getattr(sub, f.name))}" for f in fields(sub)]
    return "\n".join(lines) + "\n"
