"""
Synthetic product corpus. Every product draws one latent value per slot (category, brand, color, material, size);
the image regions are noisy mixtures of fixed per-value factor embeddings, a random subset of the slots is exposed as
"key:value" attributes, and the title is a category-specific template over all slot values. Titles therefore carry
facts that only the image shows when an attribute is hidden.
"""
import logging
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from arguments.data_arguments import DataArguments, Domain, TemplateStyle
from utils.exceptions import ContractError

logger = logging.getLogger(__name__)

SLOTS = ("category", "brand", "color", "material", "size")

CATEGORY_CATALOG: Dict[Domain, List[str]] = {
    Domain.SOURCE: ["shirt", "jacket", "chair", "table", "blender", "kettle", "headphones", "keyboard", "tent",
                    "bicycle"],
    Domain.NOVEL: ["planter", "leash", "handbag", "toolbox", "teapot", "hammock", "birdhouse", "aquarium"],
}

CATEGORY_FILLERS: Dict[str, Tuple[str, ...]] = {
    "shirt": ("casual", "button"), "jacket": ("winter", "hooded"), "chair": ("dining", "armless"),
    "table": ("coffee", "round"), "blender": ("countertop", "smoothie"), "kettle": ("electric", "cordless"),
    "headphones": ("wireless", "noise"), "keyboard": ("mechanical", "backlit"), "tent": ("camping", "dome"),
    "bicycle": ("city", "commuter"),
    "planter": ("garden", "indoor"), "leash": ("dog", "walking"), "handbag": ("shoulder", "tote"),
    "toolbox": ("portable", "storage"), "teapot": ("loose", "leaf"), "hammock": ("outdoor", "hanging"),
    "birdhouse": ("wild", "nesting"), "aquarium": ("tropical", "fish"),
}

SLOT_CATALOG: Dict[str, List[str]] = {
    "brand": ["acme", "zenith", "nordic", "lumina", "vertex", "orchid", "summit", "harbor", "pioneer", "cobalt",
              "juniper", "atlas"],
    "color": ["red", "blue", "green", "black", "white", "yellow", "purple", "orange", "grey", "pink", "brown",
              "teal"],
    "material": ["cotton", "leather", "steel", "wood", "ceramic", "bamboo", "plastic", "glass", "wool", "linen"],
    "size": ["small", "medium", "large", "xl", "compact", "oversized"],
}

TITLE_TEMPLATES: Dict[TemplateStyle, List[str]] = {
    TemplateStyle.BRAND_FIRST: [
        "{brand} {color} {material} {filler} {category} size {size}",
        "{brand} {filler} {category} in {color} {material} {size}",
    ],
    TemplateStyle.CATEGORY_FIRST: [
        "{category} {filler} by {brand} in {color} {material} size {size}",
        "{filler} {category} {material} {color} {size} from {brand}",
    ],
}

MIN_EXPOSED_ATTRIBUTES = 2


@dataclass
class ProductRecord:
    id: str
    image_features: np.ndarray  # [L_I, F]
    attributes: List[str]
    title: str

    def __post_init__(self):
        self.image_features = np.asarray(self.image_features, dtype=np.float32)
        if self.image_features.ndim != 2 or self.image_features.shape[0] < 1:
            raise ContractError(f"product {self.id}: image features must be a non-empty [L_I, F] matrix")
        if not np.isfinite(self.image_features).all():
            raise ContractError(f"product {self.id}: image features must be finite")
        if len(self.attributes) < MIN_EXPOSED_ATTRIBUTES:
            raise ContractError(f"product {self.id}: at least {MIN_EXPOSED_ATTRIBUTES} attributes are required")
        if not self.title.strip():
            raise ContractError(f"product {self.id}: empty title")

    def to_json_dict(self) -> dict:
        return {"id": self.id, "image_features": self.image_features.astype(float).tolist(),
                "attributes": list(self.attributes), "title": self.title}

    @classmethod
    def from_json_dict(cls, content: dict) -> "ProductRecord":
        return cls(id=content["id"], image_features=np.asarray(content["image_features"], dtype=np.float32),
                   attributes=list(content["attributes"]), title=content["title"])


@dataclass(frozen=True)
class CorpusSpec:
    num_products: int = 2000
    num_categories: int = 5
    num_brands: int = 8
    num_colors: int = 8
    num_materials: int = 6
    num_sizes: int = 4
    domain: Domain = Domain.NOVEL
    template_style: Optional[TemplateStyle] = None
    visual_noise: float = 0.1
    attribute_exposure: float = 0.6
    hidden_slots: Tuple[str, ...] = ()
    image_seq_len: int = 5
    image_feature_dim: int = 32
    feature_seed: int = 17
    seed: int = 42
    id_prefix: str = field(default="")

    def __post_init__(self):
        if self.num_products < 1:
            raise ContractError(f"num_products must be positive, got {self.num_products}")
        for slot, count in self.slot_sizes.items():
            available = len(self.catalog(slot))
            if not 1 <= count <= available:
                raise ContractError(f"{slot} count must lie in [1, {available}], got {count}")
        if self.visual_noise < 0:
            raise ContractError(f"visual_noise must be non-negative, got {self.visual_noise}")
        if not 0.0 <= self.attribute_exposure <= 1.0:
            raise ContractError(f"attribute_exposure must lie in [0, 1], got {self.attribute_exposure}")
        unknown = set(self.hidden_slots) - set(SLOTS)
        if unknown:
            raise ContractError(f"unknown hidden slots {sorted(unknown)}, expected a subset of {SLOTS}")
        if len(SLOTS) - len(set(self.hidden_slots)) < MIN_EXPOSED_ATTRIBUTES:
            raise ContractError(f"at least {MIN_EXPOSED_ATTRIBUTES} slots must stay exposable")
        if self.image_seq_len < 1 or self.image_feature_dim < 1:
            raise ContractError("image_seq_len and image_feature_dim must be positive")

    @property
    def slot_sizes(self) -> Dict[str, int]:
        return {"category": self.num_categories, "brand": self.num_brands, "color": self.num_colors,
                "material": self.num_materials, "size": self.num_sizes}

    @property
    def style(self) -> TemplateStyle:
        return self.template_style or self.domain.default_template_style

    def catalog(self, slot: str) -> List[str]:
        return CATEGORY_CATALOG[self.domain] if slot == "category" else SLOT_CATALOG[slot]

    @classmethod
    def from_data_arguments(cls, data_args: DataArguments, domain: Domain = Domain.NOVEL, **overrides
                            ) -> "CorpusSpec":
        source = domain == Domain.SOURCE
        kwargs = dict(
            num_products=data_args.source_num_products if source else data_args.num_products,
            num_categories=data_args.source_num_categories if source else data_args.num_categories,
            num_brands=data_args.num_brands, num_colors=data_args.num_colors,
            num_materials=data_args.num_materials, num_sizes=data_args.num_sizes, domain=domain,
            template_style=None if source else data_args.template_style,
            visual_noise=data_args.visual_noise, attribute_exposure=data_args.attribute_exposure,
            image_seq_len=data_args.image_seq_len, image_feature_dim=data_args.image_feature_dim,
            feature_seed=data_args.feature_seed,
            seed=data_args.corpus_seed + 1 if source else data_args.corpus_seed,
            id_prefix=f"{domain.value}-")
        kwargs.update(overrides)
        return cls(**kwargs)


def _global_value_index(slot: str, value: str) -> int:
    # categories of both domains share one index space so that their factors never collide
    if slot == "category":
        return (CATEGORY_CATALOG[Domain.SOURCE] + CATEGORY_CATALOG[Domain.NOVEL]).index(value)
    return SLOT_CATALOG[slot].index(value)


def factor_embedding(slot: str, value: str, spec: CorpusSpec) -> np.ndarray:
    """The fixed visual signature of one slot value; depends on ``feature_seed`` only."""
    rng = np.random.default_rng([spec.feature_seed, SLOTS.index(slot), _global_value_index(slot, value)])
    return rng.normal(0.0, 1.0, size=spec.image_feature_dim)


def region_mixing(spec: CorpusSpec) -> np.ndarray:
    """[L_I, n_slots] positive weights: how strongly each region shows each slot."""
    rng = np.random.default_rng([spec.feature_seed, len(SLOTS)])
    return rng.uniform(0.2, 1.0, size=(spec.image_seq_len, len(SLOTS)))


def render_title(values: Dict[str, str], style: TemplateStyle) -> str:
    category = values["category"]
    templates = TITLE_TEMPLATES[style]
    template = templates[_global_value_index("category", category) % len(templates)]
    return template.format(filler=" ".join(CATEGORY_FILLERS[category]), **values)


def _exposed_slots(rng: np.random.Generator, spec: CorpusSpec) -> List[str]:
    exposable = [slot for slot in SLOTS if slot not in spec.hidden_slots]
    draws = rng.random(len(SLOTS))
    exposed = [slot for slot, draw in zip(SLOTS, draws) if slot in exposable and draw < spec.attribute_exposure]
    if len(exposed) < MIN_EXPOSED_ATTRIBUTES:
        for index in rng.permutation(len(exposable)):
            if exposable[index] not in exposed:
                exposed.append(exposable[index])
            if len(exposed) == MIN_EXPOSED_ATTRIBUTES:
                break
    return [slot for slot in SLOTS if slot in exposed]


def generate_product(index: int, spec: CorpusSpec, mixing: np.ndarray) -> ProductRecord:
    rng = np.random.default_rng([spec.seed, index])
    values = {slot: spec.catalog(slot)[int(rng.integers(count))] for slot, count in spec.slot_sizes.items()}
    factors = np.stack([factor_embedding(slot, values[slot], spec) for slot in SLOTS])
    features = mixing @ factors / np.sqrt(len(SLOTS))
    features = features + rng.normal(0.0, spec.visual_noise, size=features.shape)
    attributes = [f"{slot}:{values[slot]}" for slot in _exposed_slots(rng, spec)]
    return ProductRecord(id=f"{spec.id_prefix}{index:06d}", image_features=features, attributes=attributes,
                         title=render_title(values, spec.style))


def generate_corpus(spec: CorpusSpec) -> List[ProductRecord]:
    """Deterministic for a given spec; product ``i`` only depends on ``(seed, i)`` and the feature seed."""
    mixing = region_mixing(spec)
    records = [generate_product(index, spec, mixing) for index in range(spec.num_products)]
    logger.info(f"Generated {len(records)} {spec.domain.value} products "
                f"({spec.num_categories} categories, {spec.style.value} titles)")
    return records


def generate_text_only_titles(spec: CorpusSpec, count: int, seed_offset: int = 1000) -> List[str]:
    """Titles of products that are never shown to the model as image/attribute pairs."""
    if count <= 0:
        return []
    extra = replace(spec, num_products=count, seed=spec.seed + seed_offset, id_prefix=f"{spec.id_prefix}text-")
    return [record.title for record in generate_corpus(extra)]


def latent_values(record: ProductRecord, slots: Sequence[str] = SLOTS) -> Dict[str, Optional[str]]:
    """Recover slot values from a title by catalog lookup; hidden slots are still spelled out in the title."""
    tokens = set(record.title.split())
    found = {}
    for slot in slots:
        catalog = CATEGORY_CATALOG[Domain.SOURCE] + CATEGORY_CATALOG[Domain.NOVEL] if slot == "category" \
            else SLOT_CATALOG[slot]
        found[slot] = next((value for value in catalog if value in tokens), None)
    return found
