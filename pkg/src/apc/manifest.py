"""Stimulus manifest: clip ids mapped to opaque media URLs.

Stimulus keys are either ``variant:<variant_id>`` (the encodings under
test) or ``level:<k>`` (the reference scale encodings of the same clip).
The engine never interprets the URLs; serving media is someone else's job.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigError
from .session import SessionConfig


def variant_key(variant_id: str) -> str:
    return f"variant:{variant_id}"


def level_key(level: int) -> str:
    return f"level:{level}"


@dataclass(frozen=True)
class StimulusManifest:
    clips: tuple[str, ...]
    stimuli: dict[str, dict[str, str]]  # clip -> stimulus key -> URL

    def __post_init__(self):
        object.__setattr__(self, "clips", tuple(self.clips))
        missing = [c for c in self.clips if c not in self.stimuli]
        if missing:
            raise ConfigError(f"manifest lists clips without stimuli: {missing}")

    def url(self, clip: str, key: str) -> str:
        try:
            return self.stimuli[clip][key]
        except KeyError:
            raise ConfigError(f"manifest has no stimulus {key!r} for clip {clip!r}") from None


def load_manifest(path: Path | str) -> StimulusManifest:
    with open(path) as fh:
        raw = json.load(fh)
    if not isinstance(raw, dict) or "clips" not in raw or "stimuli" not in raw:
        raise ConfigError(f"{path}: manifest must have 'clips' and 'stimuli' keys")
    return StimulusManifest(clips=tuple(raw["clips"]), stimuli=raw["stimuli"])


def save_manifest(manifest: StimulusManifest, path: Path | str) -> None:
    with open(path, "w") as fh:
        json.dump({"clips": list(manifest.clips), "stimuli": manifest.stimuli}, fh, indent=2)
        fh.write("\n")


def validate_config_against_manifest(
    config: SessionConfig, manifest: StimulusManifest
) -> list[str]:
    """Every (clip, variant) and (clip, level 1..N) must resolve to a URL.

    Returns a list of human-readable problems; empty means valid.
    """
    problems = []
    for clip in config.clips:
        if clip not in manifest.stimuli:
            problems.append(f"clip {clip!r} is not in the manifest")
            continue
        keys = manifest.stimuli[clip]
        for variant in config.variants:
            if variant_key(variant) not in keys:
                problems.append(f"clip {clip!r} lacks stimulus for variant {variant!r}")
        missing_levels = [
            k for k in range(1, config.scale_levels + 1) if level_key(k) not in keys
        ]
        if missing_levels:
            problems.append(
                f"clip {clip!r} lacks reference levels "
                f"{missing_levels[:5]}{'...' if len(missing_levels) > 5 else ''}"
            )
    return problems
