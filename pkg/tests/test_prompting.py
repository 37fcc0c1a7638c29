import pytest

from climcheck.assembly import AssembledContext
from climcheck.domain import Label2, Label4, Scheme, SourceKind, Strategy
from climcheck.prompting import (
    IMAGE_ROLES,
    PromptError,
    Role,
    build_role_prompt,
    build_verdict_prompt,
    load_catalog,
)
from util import make_sample

CONTEXT = AssembledContext(
    blocks=((SourceKind.FACT_CHECK, "### Fact-check sites\n- [False] a — b"),),
    est_tokens=11,
    dropped=(),
)


@pytest.fixture()
def sample(tmp_path):
    return make_sample(
        tmp_path, claim="Glaciers are {growing}", description="A glacier photo"
    )


def test_catalog_has_all_templates_and_label_definitions():
    catalog = load_catalog()
    assert len(catalog["templates"]) == 13
    for scheme in ("4class", "2class"):
        assert scheme in catalog["labels"]
    four = catalog["labels"]["4class"]
    for label in ("Accurate", "Misleading", "False", "Unverifiable"):
        assert label in four
    assert "consistent with established scientific consensus" in four
    two = catalog["labels"]["2class"]
    assert "Accurate" in two and "Disinformation" in two


def test_catalog_override_validation(tmp_path):
    bad = tmp_path / "catalog.yaml"
    bad.write_text("version: 1\ntemplates: {}\n", encoding="utf-8")
    with pytest.raises(PromptError, match="missing templates"):
        load_catalog(bad)
    bad.write_text("version: 7\n", encoding="utf-8")
    with pytest.raises(PromptError, match="version"):
        load_catalog(bad)


def test_verdict_prompt_fills_everything(sample):
    spec = build_verdict_prompt(sample, CONTEXT, Strategy.COT, Scheme.FOUR_CLASS)
    assert spec.template_id == "verdict_cot_4class"
    assert spec.sample_id == sample.id
    assert spec.image_refs == (sample.image_path,)
    assert not spec.schema.allow_drafts
    assert spec.schema.labels == frozenset(l.value for l in Label4)
    # claim lands verbatim, braces and all, and no placeholder survives
    assert "Glaciers are {growing}" in spec.user_text
    for marker in ("{labels}", "{evidence}", "{claim}"):
        assert marker not in spec.user_text
    assert "### Fact-check sites" in spec.user_text
    assert "most reliable source first" in spec.user_text
    # section order: definitions, evidence, claim, instruction
    labels_at = spec.user_text.index("Accurate:")
    evidence_at = spec.user_text.index("### Fact-check sites")
    claim_at = spec.user_text.index("Glaciers are")
    assert labels_at < evidence_at < claim_at


def test_verdict_prompt_without_evidence(sample):
    for context in (None, AssembledContext((), 0, ())):
        spec = build_verdict_prompt(sample, context, Strategy.COT, Scheme.FOUR_CLASS)
        assert "rely on the image and your own knowledge" in spec.user_text
        assert "most reliable source first" not in spec.user_text


def test_cod_prompt_allows_drafts_and_asks_for_them(sample):
    spec = build_verdict_prompt(sample, CONTEXT, Strategy.COD, Scheme.TWO_CLASS)
    assert spec.template_id == "verdict_cod_2class"
    assert spec.schema.allow_drafts
    assert spec.schema.labels == frozenset(l.value for l in Label2)
    assert "draft" in spec.user_text.lower()
    assert "up to 3" in spec.user_text


def test_role_prompts_cover_all_roles(sample):
    for role in IMAGE_ROLES:
        spec = build_role_prompt(sample, role, Scheme.FOUR_CLASS)
        assert spec.template_id == f"role_{role.value}_4class"
        assert spec.image_refs == (sample.image_path,)
        assert "Expert description of the image: A glacier photo" in spec.user_text
    scientist = build_role_prompt(sample, Role.CLIMATE_SCIENTIST, Scheme.FOUR_CLASS)
    assert "IPCC" in scientist.user_text and "NASA" in scientist.user_text


def test_role_prompt_without_description_mentions_absence(tmp_path):
    sample = make_sample(tmp_path, description=None)
    spec = build_role_prompt(sample, Role.NEUTRAL, Scheme.TWO_CLASS)
    assert "(No expert description of the image is available.)" in spec.user_text


def test_description_only_role_rules(tmp_path, sample):
    spec = build_role_prompt(sample, Role.DESCRIPTION_ONLY, Scheme.TWO_CLASS)
    assert spec.image_refs == ()
    assert "A glacier photo" in spec.user_text

    with pytest.raises(PromptError, match="2class"):
        build_role_prompt(sample, Role.DESCRIPTION_ONLY, Scheme.FOUR_CLASS)
    bare = make_sample(tmp_path, sid="bare", description=None)
    with pytest.raises(PromptError, match="no description"):
        build_role_prompt(bare, Role.DESCRIPTION_ONLY, Scheme.TWO_CLASS)


def test_all_verdict_templates_resolve(sample):
    seen = set()
    for strategy in Strategy:
        for scheme in Scheme:
            spec = build_verdict_prompt(sample, None, strategy, scheme)
            seen.add(spec.template_id)
            assert spec.system_text
            assert '"label"' in spec.user_text  # reply schema is spelled out
    assert len(seen) == 4
