"""Model persistence: one versioned JSON document per trained model.

Every document carries a format tag and schema version. Serialization is
canonical (sorted keys, fixed separators, trailing newline) so a
save -> load -> save round trip is bit-exact.

A model *bundle* is a directory holding the scaler, the trained models,
an optional IP-attribute table, and a manifest naming the enabled
contexts and the flow column schema.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .cluster_models import CentroidModel, FlowModel, TemporalModel
from .errors import ConfigError
from .flow_ingest import FeatureScaler, IpAttributeTable, IpEmbedder, octet_embedding

FORMAT_TAG = "capow-model"
MANIFEST_TAG = "capow-manifest"
SCHEMA_VERSION = 1

MANIFEST_FILE = "manifest.json"
BUNDLE_FILES = {
    "scaler": "scaler.json",
    "dabr": "dabr.json",
    "tam": "tam.json",
    "flow": "flow.json",
    "ip_table": "ip_table.json",
}

Model = CentroidModel | TemporalModel | FlowModel | FeatureScaler | IpAttributeTable


def dumps_model(model: Model) -> str:
    """Serialize a model to its canonical JSON document."""
    if isinstance(model, CentroidModel):
        body = {
            "kind": "dabr",
            "centroid": list(model.centroid),
            "delta_max": model.delta_max,
            "scale_i": model.scale_i,
        }
    elif isinstance(model, TemporalModel):
        body = {
            "kind": "tam",
            "intervals": {
                user: [[start, end] for start, end in ivs]
                for user, ivs in sorted(model.intervals.items())
            },
            "delta_max_min": model.delta_max_min,
            "aging_window_days": model.aging_window_days,
        }
    elif isinstance(model, FlowModel):
        body = {
            "kind": "flow",
            "legit_centroid": list(model.legit_centroid),
            "malicious_centroid": list(model.malicious_centroid),
        }
    elif isinstance(model, FeatureScaler):
        body = {"kind": "scaler", "mins": list(model.mins), "maxs": list(model.maxs)}
    elif isinstance(model, IpAttributeTable):
        body = {
            "kind": "ip_table",
            "columns": list(model.columns),
            "rows": {ip: list(v) for ip, v in sorted(model.rows.items())},
            "fallback": list(model.fallback),
        }
    else:
        raise TypeError(f"cannot serialize {type(model).__name__}")
    body["format"] = FORMAT_TAG
    body["schema_version"] = SCHEMA_VERSION
    return json.dumps(body, sort_keys=True, separators=(",", ": "), indent=1) + "\n"


def loads_model(text: str) -> Model:
    """Parse a canonical model document back into its typed form."""
    doc = json.loads(text)
    if not isinstance(doc, dict) or doc.get("format") != FORMAT_TAG:
        raise ConfigError("not a capow model document")
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise ConfigError(f"unsupported model schema version {doc.get('schema_version')!r}")
    kind = doc.get("kind")
    try:
        if kind == "dabr":
            return CentroidModel(
                centroid=tuple(doc["centroid"]),
                delta_max=doc["delta_max"],
                scale_i=doc["scale_i"],
            )
        if kind == "tam":
            return TemporalModel(
                intervals={
                    user: tuple((s, e) for s, e in ivs)
                    for user, ivs in doc["intervals"].items()
                },
                delta_max_min=doc["delta_max_min"],
                aging_window_days=doc["aging_window_days"],
            )
        if kind == "flow":
            return FlowModel(
                legit_centroid=tuple(doc["legit_centroid"]),
                malicious_centroid=tuple(doc["malicious_centroid"]),
            )
        if kind == "scaler":
            return FeatureScaler(mins=tuple(doc["mins"]), maxs=tuple(doc["maxs"]))
        if kind == "ip_table":
            return IpAttributeTable(
                rows={ip: tuple(v) for ip, v in doc["rows"].items()},
                columns=tuple(doc["columns"]),
                fallback=tuple(doc["fallback"]),
            )
    except KeyError as exc:
        raise ConfigError(f"model document missing field {exc}") from None
    raise ConfigError(f"unknown model kind {kind!r}")


def save_model(model: Model, path: str | Path) -> Path:
    path = Path(path)
    path.write_text(dumps_model(model), encoding="utf-8")
    return path


def load_model(path: str | Path) -> Model:
    return loads_model(Path(path).read_text(encoding="utf-8"))


@dataclass
class ModelBundle:
    """Everything the gate needs to score requests."""

    scaler: FeatureScaler
    tam: TemporalModel | None = None
    flow: FlowModel | None = None
    dabr: CentroidModel | None = None
    ip_table: IpAttributeTable | None = None
    flow_columns: tuple[str, ...] = ()
    contexts_enabled: frozenset[str] = field(default_factory=frozenset)

    def embedder(self) -> IpEmbedder:
        if self.ip_table is not None:
            return self.ip_table.embed
        return octet_embedding


def save_bundle(bundle: ModelBundle, directory: str | Path) -> Path:
    """Write the bundle's models plus a manifest into a directory."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    files: dict[str, str] = {}
    for name, model in (
        ("scaler", bundle.scaler),
        ("dabr", bundle.dabr),
        ("tam", bundle.tam),
        ("flow", bundle.flow),
        ("ip_table", bundle.ip_table),
    ):
        if model is None:
            continue
        save_model(model, directory / BUNDLE_FILES[name])
        files[name] = BUNDLE_FILES[name]
    manifest = {
        "format": MANIFEST_TAG,
        "schema_version": SCHEMA_VERSION,
        "contexts_enabled": sorted(bundle.contexts_enabled),
        "files": files,
        "flow_columns": list(bundle.flow_columns),
    }
    (directory / MANIFEST_FILE).write_text(
        json.dumps(manifest, sort_keys=True, separators=(",", ": "), indent=1) + "\n",
        encoding="utf-8",
    )
    return directory


def load_bundle(directory: str | Path) -> ModelBundle:
    directory = Path(directory)
    manifest_path = directory / MANIFEST_FILE
    if not manifest_path.exists():
        raise ConfigError(f"{directory}: no {MANIFEST_FILE}; not a model bundle")
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    if manifest.get("format") != MANIFEST_TAG:
        raise ConfigError(f"{manifest_path}: not a capow manifest")
    files = manifest.get("files", {})
    if "scaler" not in files:
        raise ConfigError(f"{directory}: bundle has no scaler")
    loaded: dict[str, Model] = {
        name: load_model(directory / filename) for name, filename in files.items()
    }
    return ModelBundle(
        scaler=loaded["scaler"],
        tam=loaded.get("tam"),
        flow=loaded.get("flow"),
        dabr=loaded.get("dabr"),
        ip_table=loaded.get("ip_table"),
        flow_columns=tuple(manifest.get("flow_columns", [])),
        contexts_enabled=frozenset(manifest.get("contexts_enabled", [])),
    )
