"""Model Card and Data Card rendering.

A card manifest is a JSON object with "model" and "data" sections; each
renders to a Markdown document with a YAML front-matter block for machine
parsing.  Required fields must be present and non-empty.
"""

from __future__ import annotations

from .errors import SchemaError

MODEL_REQUIRED = (
    "name",
    "version",
    "architecture",
    "intended_use",
    "limitations",
    "training_data",
)
DATA_REQUIRED = ("name", "collection", "annotation", "class_distribution", "known_biases")


def validate_manifest(manifest: dict, path: str = "<manifest>") -> None:
    """Raise SchemaError naming every missing or empty required field."""
    problems = []
    for section, required in (("model", MODEL_REQUIRED), ("data", DATA_REQUIRED)):
        body = manifest.get(section)
        if not isinstance(body, dict):
            problems.append(f"missing section {section!r}")
            continue
        for field in required:
            value = body.get(field)
            if value is None or (isinstance(value, (str, list, dict)) and not value):
                problems.append(f"{section}.{field} missing or empty")
    if problems:
        raise SchemaError(f"{path}: invalid card manifest: " + "; ".join(problems))


def _front_matter(pairs: list[tuple[str, str]]) -> str:
    lines = ["---"]
    for key, value in pairs:
        lines.append(f"{key}: {value}")
    lines.append("---")
    return "\n".join(lines)


def _section(title: str, body) -> str:
    if isinstance(body, dict):
        rows = "\n".join(f"- **{k}**: {v}" for k, v in sorted(body.items()))
        return f"## {title}\n\n{rows}\n"
    if isinstance(body, list):
        rows = "\n".join(f"- {v}" for v in body)
        return f"## {title}\n\n{rows}\n"
    return f"## {title}\n\n{body}\n"


def render_model_card(manifest: dict, path: str = "<manifest>") -> str:
    validate_manifest(manifest, path)
    model = manifest["model"]
    parts = [
        _front_matter(
            [
                ("card_type", "model"),
                ("name", str(model["name"])),
                ("version", str(model["version"])),
            ]
        ),
        f"\n# Model Card: {model['name']}\n",
        _section("Architecture", model["architecture"]),
        _section("Intended Use", model["intended_use"]),
        _section("Limitations", model["limitations"]),
        _section("Training Data", model["training_data"]),
    ]
    for key in ("metrics", "ethical_considerations", "contact"):
        if key in model:
            parts.append(_section(key.replace("_", " ").title(), model[key]))
    return "\n".join(parts)


def render_data_card(manifest: dict, path: str = "<manifest>") -> str:
    validate_manifest(manifest, path)
    data = manifest["data"]
    version = str(data.get("version", manifest["model"]["version"]))
    parts = [
        _front_matter(
            [("card_type", "data"), ("name", str(data["name"])), ("version", version)]
        ),
        f"\n# Data Card: {data['name']}\n",
        _section("Collection", data["collection"]),
        _section("Annotation", data["annotation"]),
        _section("Class Distribution", data["class_distribution"]),
        _section("Known Biases", data["known_biases"]),
    ]
    for key in ("licensing", "splits", "contact"):
        if key in data:
            parts.append(_section(key.replace("_", " ").title(), data[key]))
    return "\n".join(parts)


def template_manifest() -> dict:
    """Starter manifest describing the bundled synthetic detector."""
    return {
        "schema": "card_manifest",
        "version": 1,
        "model": {
            "name": "synthetic-bev-detector",
            "version": "0.1.0",
            "architecture": (
                "Forward-only multi-head cross-attention decoder over concatenated "
                "LiDAR BEV and camera sector tokens; anchored object queries emit "
                "scored 3D boxes with per-parameter uncertainty."
            ),
            "intended_use": (
                "Validation harness for attention saliency, faithfulness testing, "
                "and uncertainty calibration tooling. Not a perception system."
            ),
            "limitations": [
                "Weights are seeded constructions, not trained parameters.",
                "Flat-world geometry: object height and z-extent follow fixed priors.",
                "Detection scores derive from planted occupancy evidence.",
            ],
            "training_data": "None (constructed weights; synthetic seeded scenes).",
        },
        "data": {
            "name": "seeded-synthetic-scenes",
            "collection": (
                "Procedurally generated BEV scenes; every scene is a pure function "
                "of a 64-bit seed."
            ),
            "annotation": "Ground-truth boxes are generated jointly with the scene.",
            "class_distribution": {"vehicle": "100%"},
            "known_biases": [
                "Object sizes and yaw ranges are narrowly distributed by construction.",
                "Minimum object separation suppresses crowded configurations.",
            ],
        },
    }
