"""Prompt construction from the shipped catalog.

All wording lives in prompts/catalog.yaml; this module only fills
placeholders and enforces structure. Bodies carry literal JSON braces in
their schema instructions, so placeholders are substituted with plain
string replacement rather than str.format.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Mapping, Optional, Union

import yaml

from .assembly import AssembledContext
from .domain import ClimcheckError, Sample, Scheme, Strategy, legal_labels


class PromptError(ClimcheckError):
    """A prompt was requested that the catalog or sample cannot satisfy."""


class Role(Enum):
    """Annotation perspectives used for ensemble labeling."""

    NEUTRAL = "neutral"
    CLIMATE_SCIENTIST = "climate_scientist"
    POLICY_ADVISOR = "policy_advisor"
    FACTCHECK_REVIEWER = "factcheck_reviewer"
    DESCRIPTION_ONLY = "description_only"


IMAGE_ROLES = (
    Role.NEUTRAL,
    Role.CLIMATE_SCIENTIST,
    Role.POLICY_ADVISOR,
    Role.FACTCHECK_REVIEWER,
)


@dataclass(frozen=True)
class ReplySchema:
    """What a well-formed reply must contain."""

    labels: frozenset
    allow_drafts: bool = False


@dataclass(frozen=True)
class PromptSpec:
    """A fully rendered prompt, ready for the backend.

    sample_id and template_id identify the call for scripted replay and
    tracing; they never reach the model.
    """

    system_text: str
    user_text: str
    image_refs: tuple[Path, ...]
    schema: ReplySchema
    sample_id: str
    template_id: str


_REQUIRED_TEMPLATES = (
    "verdict_cot_4class",
    "verdict_cot_2class",
    "verdict_cod_4class",
    "verdict_cod_2class",
    "role_neutral_4class",
    "role_neutral_2class",
    "role_climate_scientist_4class",
    "role_climate_scientist_2class",
    "role_policy_advisor_4class",
    "role_policy_advisor_2class",
    "role_factcheck_reviewer_4class",
    "role_factcheck_reviewer_2class",
    "role_description_only_2class",
)

CATALOG_VERSION = 1


def _validate_catalog(data: dict, origin: str) -> dict:
    if not isinstance(data, dict):
        raise PromptError(f"{origin}: catalog must be a mapping")
    if data.get("version") != CATALOG_VERSION:
        raise PromptError(
            f"{origin}: unsupported catalog version {data.get('version')!r}"
        )
    templates = data.get("templates") or {}
    missing = [tid for tid in _REQUIRED_TEMPLATES if tid not in templates]
    if missing:
        raise PromptError(f"{origin}: catalog is missing templates: {missing}")
    for tid, tpl in templates.items():
        if not isinstance(tpl, dict) or "body" not in tpl or "system" not in tpl:
            raise PromptError(f"{origin}: template {tid!r} needs system and body")
    for key in ("labels", "snippets"):
        if key not in data:
            raise PromptError(f"{origin}: catalog is missing section {key!r}")
    return data


@functools.lru_cache(maxsize=None)
def _packaged_catalog() -> dict:
    text = resources.files("climcheck").joinpath("prompts/catalog.yaml").read_text(
        encoding="utf-8"
    )
    return _validate_catalog(yaml.safe_load(text), "packaged catalog")


def load_catalog(path: Optional[Union[str, Path]] = None) -> dict:
    """Load the prompt catalog, packaged by default or from an override file."""
    if path is None:
        return _packaged_catalog()
    text = Path(path).read_text(encoding="utf-8")
    return _validate_catalog(yaml.safe_load(text), str(path))


def _fill(body: str, mapping: Mapping[str, str]) -> str:
    # Plain replacement: bodies contain literal {...} JSON examples that
    # str.format would choke on.
    out = body
    for placeholder, value in mapping.items():
        out = out.replace(placeholder, value)
    return out


def _template(catalog: dict, template_id: str) -> dict:
    try:
        return catalog["templates"][template_id]
    except KeyError:
        raise PromptError(f"unknown template id {template_id!r}") from None


def _evidence_text(context: Optional[AssembledContext], catalog: dict) -> str:
    if context is not None and context.blocks:
        return catalog["snippets"]["evidence_header"] + "\n\n" + context.text
    return catalog["snippets"]["no_evidence"]


def build_verdict_prompt(
    sample: Sample,
    context: Optional[AssembledContext],
    strategy: Strategy,
    scheme: Scheme,
    catalog: Optional[dict] = None,
) -> PromptSpec:
    """Render the verification prompt for one sample.

    Ordering inside the body is fixed by the catalog: framing, label
    definitions, evidence (or the no-evidence sentence), the claim verbatim,
    the strategy instruction, the output schema.
    """
    catalog = catalog or load_catalog()
    template_id = f"verdict_{strategy.value.lower()}_{scheme.value}"
    template = _template(catalog, template_id)
    user_text = _fill(
        template["body"],
        {
            "{labels}": catalog["labels"][scheme.value],
            "{evidence}": _evidence_text(context, catalog),
            "{claim}": sample.claim,
        },
    )
    return PromptSpec(
        system_text=template["system"],
        user_text=user_text,
        image_refs=(sample.image_path,),
        schema=ReplySchema(
            labels=legal_labels(scheme),
            allow_drafts=(strategy is Strategy.COD),
        ),
        sample_id=sample.id,
        template_id=template_id,
    )


def build_role_prompt(
    sample: Sample,
    role: Role,
    scheme: Scheme,
    catalog: Optional[dict] = None,
) -> PromptSpec:
    """Render one annotation-role prompt for one sample."""
    catalog = catalog or load_catalog()
    if role is Role.DESCRIPTION_ONLY:
        if scheme is not Scheme.TWO_CLASS:
            raise PromptError("the description-only role exists only for 2class")
        if not sample.description:
            raise PromptError(
                f"sample {sample.id!r} has no description for the description-only role"
            )
    if sample.description:
        description = f"Expert description of the image: {sample.description}"
    else:
        description = "(No expert description of the image is available.)"

    template_id = f"role_{role.value}_{scheme.value}"
    template = _template(catalog, template_id)
    user_text = _fill(
        template["body"],
        {
            "{labels}": catalog["labels"][scheme.value],
            "{claim}": sample.claim,
            "{description}": description,
        },
    )
    image_refs: tuple[Path, ...]
    if role is Role.DESCRIPTION_ONLY:
        image_refs = ()
    else:
        image_refs = (sample.image_path,)
    return PromptSpec(
        system_text=template["system"],
        user_text=user_text,
        image_refs=image_refs,
        schema=ReplySchema(labels=legal_labels(scheme), allow_drafts=False),
        sample_id=sample.id,
        template_id=template_id,
    )
