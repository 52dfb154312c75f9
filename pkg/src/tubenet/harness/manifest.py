"""Run manifests: every artifact listed with a content hash."""

import hashlib
import json
import os


def sha256_of(path):
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(outdir, scenario, config_echo, artifacts, extra=None):
    """Write manifest.json listing all artifacts with sha256 hashes."""
    entries = []
    for rel in sorted(artifacts):
        path = os.path.join(outdir, rel)
        entries.append(
            {"path": rel, "sha256": sha256_of(path), "bytes": os.path.getsize(path)}
        )
    manifest = {
        "scenario": scenario,
        "config": config_echo,
        "artifacts": entries,
    }
    if extra:
        manifest.update(extra)
    path = os.path.join(outdir, "manifest.json")
    with open(path, "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")
    return path
