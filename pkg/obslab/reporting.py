"""CSV and JSON outputs, the run manifest and the locked output directory."""

import csv
import hashlib
import json
import logging
import math
import os
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from obslab import __version__
from obslab.errors import NumericalError, OutputLockedError

log = logging.getLogger(__name__)

LOCK_NAME = ".obslab.lock"
MANIFEST_NAME = "manifest.json"


def format_value(value) -> str:
    """17 significant digits for floats; booleans as true/false."""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return "%.17g" % value
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return str(value)


def jsonable(value):
    """Plain JSON types; non-finite floats become the strings inf, -inf, nan."""
    if isinstance(value, dict):
        return {str(k): jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return jsonable(value.tolist())
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if math.isfinite(value):
            return value
        return "nan" if math.isnan(value) else ("inf" if value > 0 else "-inf")
    if isinstance(value, (complex, np.complexfloating)):
        return {"re": jsonable(value.real), "im": jsonable(value.imag)}
    if isinstance(value, Path):
        return str(value)
    return value


def write_csv(path: Path, header: list[str], rows) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([format_value(v) for v in row])


def read_csv(path: Path) -> list[dict[str, str]]:
    with Path(path).open(newline="", encoding="utf-8") as f:
        return list(csv.DictReader(f))


def write_json(path: Path, payload) -> None:
    text = json.dumps(jsonable(payload), indent=2, allow_nan=False)
    Path(path).write_text(text + "\n", encoding="utf-8")


def config_hash(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


@dataclass
class RunManifest:
    config_hash: str
    version: str = __version__
    timings: dict[str, float] = field(default_factory=dict)
    outputs: list[str] = field(default_factory=list)

    @contextmanager
    def stage(self, name: str):
        start = time.perf_counter()
        try:
            yield
        finally:
            self.timings[name] = time.perf_counter() - start
            log.debug("stage %s: %.3f s", name, self.timings[name])

    def as_dict(self) -> dict:
        return {
            "config_hash": self.config_hash,
            "version": self.version,
            "timings": dict(self.timings),
            "outputs": sorted(self.outputs),
        }

    def verify(self, directory: Path) -> None:
        missing = [name for name in self.outputs if not (Path(directory) / name).is_file()]
        if missing:
            raise NumericalError(f"declared outputs missing: {', '.join(missing)}")


class OutputDirectory:
    """Exclusive use of an output directory for one run.

    The lock file is created with O_EXCL. When the run fails, every file it
    wrote is removed before the lock is released.
    """

    def __init__(self, path: Path | str, manifest: RunManifest):
        self.path = Path(path)
        self.manifest = manifest
        self.written: list[Path] = []
        self._lock = self.path / LOCK_NAME

    def __enter__(self) -> "OutputDirectory":
        self.path.mkdir(parents=True, exist_ok=True)
        try:
            fd = os.open(self._lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise OutputLockedError(f"output directory {self.path} is locked by another run ({LOCK_NAME})") from None
        with os.fdopen(fd, "w") as f:
            f.write(f"{os.getpid()}\n")
        return self

    def __exit__(self, exc_type, exc, tb):
        try:
            if exc_type is not None:
                for path in self.written:
                    path.unlink(missing_ok=True)
                log.info("removed %d partial output(s) from %s", len(self.written), self.path)
        finally:
            self._lock.unlink(missing_ok=True)
        return False

    def _track(self, name: str) -> Path:
        target = self.path / name
        self.written.append(target)
        if name != MANIFEST_NAME:
            self.manifest.outputs.append(name)
        return target

    def csv(self, name: str, header: list[str], rows) -> Path:
        target = self._track(name)
        write_csv(target, header, rows)
        log.info("wrote %s", target)
        return target

    def json(self, name: str, payload) -> Path:
        target = self._track(name)
        write_json(target, payload)
        log.info("wrote %s", target)
        return target

    def finish(self, report: dict) -> dict:
        """Write report.json with the manifest embedded, then manifest.json."""
        self.manifest.outputs.append("report.json")
        self.manifest.outputs.append(MANIFEST_NAME)
        report = {**report, "manifest": self.manifest.as_dict()}
        target = self.path / "report.json"
        self.written.append(target)
        write_json(target, report)
        self.json(MANIFEST_NAME, self.manifest.as_dict())
        self.manifest.verify(self.path)
        return report
