"""On-disk formats: embeddings, checkpoints, epoch logs, and reports.

Binary payloads are little-endian float64 behind a magic + JSON header, so
files round-trip losslessly and are readable across platforms.  Tabular
outputs are CSV with a fixed column order; structured reports are a single
JSON document with numbers rendered at 6 significant digits.
"""

import csv
import json
import struct
from dataclasses import asdict

import numpy as np

from .data import Sample
from .errors import CheckpointKindError, PersistenceError
from .evaluation import BoxplotStats, boxplot_stats
from .heads import (
    DEFAULT_LEAKY_SLOPE,
    MeanFusionHead,
    MlpFusionHead,
    MultiViewHead,
)
from .arcmargin import ArcMarginHead
from .layers import BatchNormLayer, DropoutSpec, LinearLayer

EMBEDDING_MAGIC = b"AVFEMB01"
CHECKPOINT_MAGIC = b"AVFCKP01"


def _json_bytes(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def _write_framed(path, magic, header: dict, payload: bytes):
    header_bytes = _json_bytes(header)
    with open(path, "wb") as fh:
        fh.write(magic)
        fh.write(struct.pack("<I", len(header_bytes)))
        fh.write(header_bytes)
        fh.write(payload)


def _read_framed(path, magic):
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise PersistenceError(f"cannot read {path}: {exc}") from exc
    if len(blob) < len(magic) + 4 or blob[: len(magic)] != magic:
        raise PersistenceError(f"{path}: bad magic, not a {magic.decode()} file")
    (header_len,) = struct.unpack("<I", blob[len(magic) : len(magic) + 4])
    start = len(magic) + 4
    if len(blob) < start + header_len:
        raise PersistenceError(f"{path}: truncated header")
    try:
        header = json.loads(blob[start : start + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise PersistenceError(f"{path}: unparsable header: {exc}") from exc
    return header, blob[start + header_len :]


def write_embeddings(path, samples, d_a=None, d_v=None):
    """Serialize samples; read(write(x)) is bit-exact at double precision."""
    samples = list(samples)
    if samples:
        d_a = samples[0].audio.shape[0]
        d_v = samples[0].video.shape[0]
    elif d_a is None or d_v is None:
        raise PersistenceError("empty sample list needs explicit d_a/d_v")
    for s in samples:
        if s.audio.shape != (d_a,) or s.video.shape != (d_v,):
            raise PersistenceError(
                f"sample {s.sample_id} does not match dims ({d_a}, {d_v})"
            )
        if not s.identity_id or not s.sample_id:
            raise PersistenceError("identifiers must be nonempty")
    header = {
        "version": 1,
        "endianness": "little",
        "d_a": int(d_a),
        "d_v": int(d_v),
        "count": len(samples),
        "records": [[s.identity_id, s.sample_id] for s in samples],
    }
    if samples:
        payload = np.concatenate(
            [np.concatenate([s.audio, s.video]) for s in samples]
        ).astype("<f8").tobytes()
    else:
        payload = b""
    _write_framed(path, EMBEDDING_MAGIC, header, payload)


def read_embeddings(path):
    header, payload = _read_framed(path, EMBEDDING_MAGIC)
    if header.get("version") != 1:
        raise PersistenceError(f"{path}: unsupported version {header.get('version')}")
    d_a, d_v, count = header["d_a"], header["d_v"], header["count"]
    if len(header["records"]) != count:
        raise PersistenceError(f"{path}: record table does not match count")
    expected = count * (d_a + d_v) * 8
    if len(payload) != expected:
        raise PersistenceError(
            f"{path}: payload length {len(payload)} != expected {expected}"
        )
    values = np.frombuffer(payload, dtype="<f8").reshape(count, d_a + d_v)
    return [
        Sample(
            identity_id=identity,
            sample_id=sample_id,
            audio=values[i, :d_a].astype(np.float64),
            video=values[i, d_a:].astype(np.float64),
        )
        for i, (identity, sample_id) in enumerate(header["records"])
    ]


def _head_state(head):
    """Full eval-reproducing state: parameters plus batchnorm running stats."""
    state = dict(head.param_dict())
    if head.kind == "mlp":
        for i, bn in enumerate(head.norms, start=1):
            state[f"bn{i}.running_mean"] = bn.running_mean
            state[f"bn{i}.running_var"] = bn.running_var
    return state


def _head_meta(head):
    meta = {
        "kind": head.kind,
        "d_a": head.d_a,
        "d_v": head.d_v,
        "d_e": head.d_e,
        "dropout_p": head.dropout.probability,
    }
    if head.kind == "mlp":
        meta["hidden"] = head.layers[0].out_dim
        meta["leaky_slope"] = head.leaky_slope
    return meta


def save_checkpoint(path, head, arc_head, provenance=None):
    state = _head_state(head)
    arc_state = {"arc.prototypes": arc_head.prototypes}
    tensors = [[f"head.{k}", list(v.shape)] for k, v in sorted(state.items())]
    tensors += [[k, list(v.shape)] for k, v in sorted(arc_state.items())]
    header = {
        "version": 1,
        "endianness": "little",
        "head": _head_meta(head),
        "arc": {
            "scale": arc_head.scale,
            "margin": arc_head.margin,
            "n_classes": arc_head.n_classes,
        },
        "provenance": provenance or {},
        "tensors": tensors,
    }
    merged = {f"head.{k}": v for k, v in state.items()}
    merged.update(arc_state)
    payload = b"".join(
        np.ascontiguousarray(merged[name], dtype="<f8").tobytes()
        for name, _ in tensors
    )
    _write_framed(path, CHECKPOINT_MAGIC, header, payload)


def _build_head(meta, tensors):
    kind = meta["kind"]
    dropout = DropoutSpec(meta["dropout_p"])

    def t(name):
        return tensors[f"head.{name}"]

    def linear(prefix):
        return LinearLayer(weight=t(f"{prefix}.weight"), bias=t(f"{prefix}.bias"))

    if kind == "mean":
        return MeanFusionHead(linear("proj_audio"), linear("proj_video"), dropout)
    if kind == "multiview":
        return MultiViewHead(
            linear("proj_audio"),
            linear("proj_video"),
            linear("shared_classifier"),
            dropout,
        )
    if kind == "mlp":
        layers = [linear(f"layer{i}") for i in (1, 2, 3)]
        norms = [
            BatchNormLayer(
                gamma=t(f"bn{i}.gamma"),
                beta=t(f"bn{i}.beta"),
                running_mean=t(f"bn{i}.running_mean"),
                running_var=t(f"bn{i}.running_var"),
            )
            for i in (1, 2, 3)
        ]
        head = MlpFusionHead(
            layers, norms, dropout, meta.get("leaky_slope", DEFAULT_LEAKY_SLOPE)
        )
        head._d_a = meta["d_a"]
        head._d_v = meta["d_v"]
        return head
    raise PersistenceError(f"unknown head kind {kind!r}")


def load_checkpoint(path, expect_kind=None):
    """Returns (head, arc_head, provenance)."""
    header, payload = _read_framed(path, CHECKPOINT_MAGIC)
    if header.get("version") != 1:
        raise PersistenceError(f"{path}: unsupported version {header.get('version')}")
    meta = header["head"]
    if expect_kind is not None and meta["kind"] != expect_kind:
        raise CheckpointKindError(
            f"{path}: checkpoint holds a {meta['kind']!r} head, expected "
            f"{expect_kind!r}"
        )
    tensors = {}
    offset = 0
    for name, shape in header["tensors"]:
        size = int(np.prod(shape)) * 8
        if offset + size > len(payload):
            raise PersistenceError(f"{path}: truncated payload at tensor {name}")
        tensors[name] = (
            np.frombuffer(payload[offset : offset + size], dtype="<f8")
            .reshape(shape)
            .astype(np.float64)
        )
        offset += size
    if offset != len(payload):
        raise PersistenceError(f"{path}: trailing bytes after last tensor")
    head = _build_head(meta, tensors)
    arc = ArcMarginHead(
        prototypes=tensors["arc.prototypes"],
        scale=header["arc"]["scale"],
        margin=header["arc"]["margin"],
    )
    return head, arc, header.get("provenance", {})


def write_epoch_log(path, records):
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(_json_bytes(asdict(r)).decode("utf-8"))
            fh.write("\n")


def read_epoch_log(path):
    records = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    return records


def _sig6(x):
    """Render a float at 6 significant digits, as a float again."""
    return float(f"{float(x):.6g}")


def _stats_dict(stats: BoxplotStats):
    return {
        "min": _sig6(stats.minimum),
        "q1": _sig6(stats.q1),
        "median": _sig6(stats.median),
        "q3": _sig6(stats.q3),
        "max": _sig6(stats.maximum),
        "whisker_low": _sig6(stats.whisker_low),
        "whisker_high": _sig6(stats.whisker_high),
        "outliers": [_sig6(v) for v in stats.outliers],
    }


def report_document(report):
    """The structured (JSON-ready) form of a DiagnosticsReport."""
    doc = {
        "eer": {
            mode: {
                "eer": _sig6(r.eer),
                "threshold": _sig6(r.threshold),
                "n_target": r.n_target,
                "n_nontarget": r.n_nontarget,
            }
            for mode, r in sorted(report.eer.items())
        },
        "angle_families": {},
        "silhouette": {m: _sig6(v) for m, v in sorted(report.silhouette.items())},
        "warnings": report.warnings,
    }

    def family_doc(angle_report):
        return {
            "per_identity": {
                identity: _stats_dict(boxplot_stats(angles)) if angles else None
                for identity, angles in sorted(angle_report.per_identity.items())
            },
            "warnings": angle_report.warnings,
        }

    if report.audio_video is not None:
        doc["angle_families"]["audio_video"] = family_doc(report.audio_video)
    if report.within_identity:
        doc["angle_families"]["within_identity"] = {
            modality: family_doc(rep)
            for modality, rep in sorted(report.within_identity.items())
        }
    if report.between_centroids:
        doc["angle_families"]["between_centroids"] = {
            modality: {
                "identities": ids,
                "matrix": [[_sig6(v) for v in row] for row in matrix],
            }
            for modality, (ids, matrix) in sorted(report.between_centroids.items())
        }
    return doc


def write_report(path_prefix, report, format="structured"):
    """Write report files; returns the list of paths written."""
    doc = report_document(report)
    if format == "structured":
        path = f"{path_prefix}.json"
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(json.dumps(doc, sort_keys=True, indent=1))
            fh.write("\n")
        return [path]
    if format != "tabular":
        raise PersistenceError(f"unknown report format {format!r}")
    paths = []
    eer_path = f"{path_prefix}_eer.csv"
    with open(eer_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["mode", "eer", "threshold", "n_target", "n_nontarget"])
        for mode, entry in doc["eer"].items():
            writer.writerow(
                [mode, f"{entry['eer']:.6g}", f"{entry['threshold']:.6g}",
                 entry["n_target"], entry["n_nontarget"]]
            )
    paths.append(eer_path)
    diag_path = f"{path_prefix}_diagnostics.csv"
    with open(diag_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["family", "modality", "identity", "min", "q1", "median", "q3", "max",
             "whisker_low", "whisker_high", "n_outliers"]
        )

        def stats_row(family, modality, identity, stats):
            writer.writerow(
                [family, modality, identity]
                + [f"{stats[k]:.6g}" for k in
                   ("min", "q1", "median", "q3", "max", "whisker_low",
                    "whisker_high")]
                + [len(stats["outliers"])]
            )

        families = doc["angle_families"]
        if "audio_video" in families:
            for identity, stats in families["audio_video"]["per_identity"].items():
                if stats is not None:
                    stats_row("audio_video", "both", identity, stats)
        for modality, fam in families.get("within_identity", {}).items():
            for identity, stats in fam["per_identity"].items():
                if stats is not None:
                    stats_row("within_identity", modality, identity, stats)
        for modality, fam in families.get("between_centroids", {}).items():
            matrix = np.asarray(fam["matrix"])
            if matrix.size:
                upper = matrix[np.triu_indices(matrix.shape[0], k=1)]
                if upper.size:
                    stats_row(
                        "between_centroids", modality, "__all__",
                        _stats_dict(boxplot_stats(upper)),
                    )
        for modality, value in doc["silhouette"].items():
            writer.writerow(
                ["silhouette", modality, "__all__", f"{value:.6g}", "", "", "", "",
                 "", "", ""]
            )
    paths.append(diag_path)
    return paths


def read_report(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise PersistenceError(f"cannot read report {path}: {exc}") from exc
