import pytest

from trustlens import cards
from trustlens.errors import SchemaError


def test_template_manifest_is_valid_and_renders():
    manifest = cards.template_manifest()
    cards.validate_manifest(manifest)
    model_md = cards.render_model_card(manifest)
    data_md = cards.render_data_card(manifest)
    assert model_md.startswith("---\ncard_type: model\n")
    assert "version: 0.1.0" in model_md
    assert "# Model Card:" in model_md
    assert "## Limitations" in model_md
    assert data_md.startswith("---\ncard_type: data\n")
    assert "## Known Biases" in data_md


def test_missing_version_rejected():
    manifest = cards.template_manifest()
    del manifest["model"]["version"]
    with pytest.raises(SchemaError, match="model.version"):
        cards.render_model_card(manifest)


def test_empty_required_field_rejected():
    manifest = cards.template_manifest()
    manifest["data"]["known_biases"] = []
    with pytest.raises(SchemaError, match="data.known_biases"):
        cards.render_data_card(manifest)


def test_missing_section_reported():
    with pytest.raises(SchemaError, match="missing section 'data'"):
        cards.validate_manifest({"model": cards.template_manifest()["model"]})


def test_all_problems_reported_at_once():
    manifest = cards.template_manifest()
    del manifest["model"]["version"]
    manifest["model"]["limitations"] = ""
    with pytest.raises(SchemaError) as err:
        cards.validate_manifest(manifest)
    assert "model.version" in str(err.value)
    assert "model.limitations" in str(err.value)
