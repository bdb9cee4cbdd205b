"""External codec transcoding hook.

Codec round-trips (MP3, AC3, EAC3, MP2, WMA, OGG, OPUS) are delegated to a
user-configured command template, e.g.::

    ffmpeg -y -i {in} -c:a {codec} -b:a {bitrate}k {out}

The template must contain the placeholders {in}, {out}, {codec} and
{bitrate}; it is invoked twice implicitly (encode+decode) by whatever tool
the user configures producing a WAV at {out}. When no template is
configured these kinds are unavailable and their sampling probability is
redistributed over the native kinds.
"""

from __future__ import annotations

import shlex
import subprocess
import tempfile
from pathlib import Path

import numpy as np

from ..audio import AudioFrame, read_wav, write_wav
from .chains import DegradationSpec
from .kinds import UnavailableDegradationError

PLACEHOLDERS = ("{in}", "{out}", "{codec}", "{bitrate}")


def validate_template(template: str) -> None:
    missing = [p for p in PLACEHOLDERS if p not in template]
    if missing:
        raise ValueError("transcoder_cmd is missing placeholders: %s"
                         % ", ".join(missing))


def transcode(frame: AudioFrame, spec: DegradationSpec,
              template: str) -> AudioFrame:
    """Round-trip `frame` through the configured external transcoder."""
    validate_template(template)
    aux = spec.aux_params
    with tempfile.TemporaryDirectory(prefix="sesqa_tc_") as tmp:
        src = Path(tmp) / "in.wav"
        dst = Path(tmp) / "out.wav"
        write_wav(frame, src, bit_depth="32f")
        cmd = (template
               .replace("{in}", str(src))
               .replace("{out}", str(dst))
               .replace("{codec}", str(aux["codec"]))
               .replace("{bitrate}", "%g" % aux["bitrate_kbps"]))
        try:
            subprocess.run(shlex.split(cmd), check=True,
                           capture_output=True, timeout=120)
        except (subprocess.CalledProcessError, subprocess.TimeoutExpired,
                FileNotFoundError) as e:
            raise UnavailableDegradationError(
                "external transcoder failed for %s: %s" % (spec.kind, e))
        if not dst.exists():
            raise UnavailableDegradationError(
                "transcoder produced no output for %s" % spec.kind)
        out = read_wav(dst)
    y = out.samples
    n = len(frame.samples)
    if len(y) >= n:
        y = y[:n]
    else:
        y = np.pad(y, (0, n - len(y)))
    return frame.with_samples(y)
