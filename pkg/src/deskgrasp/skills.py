"""Geometric-prior skill selection: instruction + scene geometry -> skill plan.

The selector is a deterministic rule engine over shape categories and
clearance flags, with exemplar-template expansion for multi-step instructions
(e.g. pouring).  An optional remote interpreter can stand in for the built-in
target resolution; everything else stays local and hermetic.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field

from .errors import (ConfigurationError, InputError, NoFeasibleSkill,
                     ParseError, TargetNotFound)

SKILLS = ("SideGrasp", "LiftUp", "TopPinch", "PourWater", "Delivery")
GRASP_SKILLS = ("SideGrasp", "LiftUp", "TopPinch")
SHAPE_CATEGORIES = ("cylindrical", "crushed", "thin_flat", "box", "irregular")

DEFAULT_WIDTH = 640
DEFAULT_HEIGHT = 480

# Verbs that imply the object should end up with the user.
HANDOVER_VERBS = frozenset({"give", "want", "pass"})

_STOPWORDS = frozenset({
    "i", "a", "an", "the", "me", "my", "to", "of", "for", "please", "can",
    "could", "you", "some", "it", "that", "this", "and", "with", "at", "in",
    "on", "up",
})


def _tokens(text: str) -> list[str]:
    return re.findall(r"[a-z0-9]+", text.lower())


def _content_tokens(text: str) -> set[str]:
    return {t for t in _tokens(text) if t not in _STOPWORDS}


@dataclass
class ShapeDescriptor:
    category: str
    aspect: float = 1.0         # bbox height / width
    area_frac: float = 0.5      # mask area / bbox area

    def validate(self):
        if self.category not in SHAPE_CATEGORIES:
            raise InputError(
                f"unknown shape category {self.category!r}; "
                f"expected one of {SHAPE_CATEGORIES}")
        return self

    @classmethod
    def from_json(cls, d: dict) -> "ShapeDescriptor":
        return cls(category=d["category"],
                   aspect=float(d.get("aspect", 1.0)),
                   area_frac=float(d.get("area_frac", 0.5))).validate()

    def to_json(self) -> dict:
        return {"category": self.category, "aspect": self.aspect,
                "area_frac": self.area_frac}


@dataclass
class SceneObject:
    label: str
    bbox: tuple          # (x1, y1, x2, y2) pixels
    shape: ShapeDescriptor
    lateral_clearance: bool
    top_clearance: bool

    @classmethod
    def from_json(cls, d: dict, width: int, height: int) -> "SceneObject":
        bbox = tuple(float(v) for v in d["bbox"])
        validate_bbox(bbox, width, height, context=d.get("label", "<object>"))
        return cls(label=str(d["label"]), bbox=bbox,
                   shape=ShapeDescriptor.from_json(d["shape"]),
                   lateral_clearance=bool(d["lateral_clearance"]),
                   top_clearance=bool(d["top_clearance"]))

    def to_json(self) -> dict:
        return {"label": self.label, "bbox": list(self.bbox),
                "shape": self.shape.to_json(),
                "lateral_clearance": self.lateral_clearance,
                "top_clearance": self.top_clearance}


@dataclass
class SceneObservation:
    objects: list
    width: int = DEFAULT_WIDTH
    height: int = DEFAULT_HEIGHT
    image: str | None = None

    @classmethod
    def from_json(cls, d: dict) -> "SceneObservation":
        width = int(d.get("width", DEFAULT_WIDTH))
        height = int(d.get("height", DEFAULT_HEIGHT))
        objects = [SceneObject.from_json(o, width, height)
                   for o in d.get("objects", [])]
        return cls(objects=objects, width=width, height=height,
                   image=d.get("image"))

    @classmethod
    def load(cls, path: str) -> "SceneObservation":
        with open(path) as f:
            return cls.from_json(json.load(f))

    def to_json(self) -> dict:
        return {"image": self.image, "width": self.width, "height": self.height,
                "objects": [o.to_json() for o in self.objects]}


@dataclass
class PlanStep:
    skill: str
    label: str
    bbox: tuple

    def to_json(self) -> dict:
        return {"skill": self.skill, "label": self.label, "bbox": list(self.bbox)}


@dataclass
class ActionPlan:
    steps: list
    response: str = ""

    @property
    def skills(self) -> list[str]:
        return [s.skill for s in self.steps]

    def to_json(self) -> dict:
        return {"version": 1, "steps": [s.to_json() for s in self.steps],
                "response": self.response}


def select_skill(obj: SceneObject) -> str:
    """Collision-aware skill for one object: shape category first, then clearance.

    An object with neither lateral nor top clearance admits no collision-free
    approach at all, so that case is rejected before any shape rule applies.
    """
    obj.shape.validate()
    lateral, top = obj.lateral_clearance, obj.top_clearance
    if not lateral and not top:
        raise NoFeasibleSkill(
            f"{obj.label!r} has neither lateral nor top clearance")
    cat = obj.shape.category
    if cat == "cylindrical":
        return "SideGrasp" if lateral else "LiftUp"
    if cat in ("crushed", "thin_flat"):
        return "TopPinch"
    if cat == "box":
        return "LiftUp" if top else "SideGrasp"
    return "TopPinch"            # irregular: pinch the rim from above


def validate_bbox(bbox, width: int = DEFAULT_WIDTH, height: int = DEFAULT_HEIGHT,
                  context: str = "") -> tuple:
    if len(bbox) != 4:
        raise ParseError(f"bounding box needs 4 coordinates, got {bbox!r}")
    x1, y1, x2, y2 = (float(v) for v in bbox)
    prefix = f"{context}: " if context else ""
    if not (0 <= x1 < x2 <= width):
        raise ParseError(
            f"{prefix}x-coordinates must satisfy 0 <= x1 < x2 <= {width}, "
            f"got x1={x1}, x2={x2}")
    if not (0 <= y1 < y2 <= height):
        raise ParseError(
            f"{prefix}y-coordinates must satisfy 0 <= y1 < y2 <= {height}, "
            f"got y1={y1}, y2={y2}")
    return (x1, y1, x2, y2)


_BBOX_RE = re.compile(
    r"\[\s*([-+0-9.eE]+)\s*,\s*([-+0-9.eE]+)\s*,\s*([-+0-9.eE]+)\s*,\s*([-+0-9.eE]+)\s*\]")


def parse_bbox(text: str, width: int = DEFAULT_WIDTH,
               height: int = DEFAULT_HEIGHT) -> tuple:
    """Extract the first bracketed 4-tuple of numbers and validate it."""
    m = _BBOX_RE.search(text)
    if not m:
        raise ParseError(f"no bracketed [x1, y1, x2, y2] tuple in {text!r}")
    try:
        coords = tuple(float(g) for g in m.groups())
    except ValueError:
        raise ParseError(f"non-numeric bounding box in {text!r}") from None
    return validate_bbox(coords, width, height, context=m.group(0))


def format_bbox(bbox) -> str:
    return "[" + ", ".join(repr(float(v)) for v in bbox) + "]"


def compute_accuracy(acc_s: float, acc_t: float) -> float:
    """Overall task accuracy: selection accuracy times execution success."""
    for name, v in (("acc_s", acc_s), ("acc_t", acc_t)):
        if not 0.0 <= v <= 1.0:
            raise InputError(f"{name} must be in [0, 1], got {v}")
    return acc_s * acc_t


# --------------------------------------------------------------------------
# Exemplar context set and plan templating.

@dataclass
class Exemplar:
    instruction: str
    scene: SceneObservation
    steps: list            # [{"skill", "label", "role"}]
    response: str = ""

    @classmethod
    def from_json(cls, d: dict) -> "Exemplar":
        scene = SceneObservation.from_json(d["scene"])
        steps = d["plan"]["steps"]
        for s in steps:
            if s["skill"] not in SKILLS:
                raise InputError(f"exemplar uses unknown skill {s['skill']!r}")
        return cls(instruction=d["instruction"], scene=scene, steps=steps,
                   response=d["plan"].get("response", ""))


class ContextSet:
    """Bundle of exemplar (instruction, scene, plan) triples."""

    def __init__(self, exemplars: list):
        if not exemplars:
            raise InputError("context set must contain at least one exemplar")
        self.exemplars = exemplars

    @classmethod
    def from_json(cls, obj) -> "ContextSet":
        if isinstance(obj, dict):
            obj = obj.get("exemplars", [])
        return cls([Exemplar.from_json(d) for d in obj])

    @classmethod
    def load(cls, path: str) -> "ContextSet":
        with open(path) as f:
            return cls.from_json(json.load(f))

    @classmethod
    def default(cls) -> "ContextSet":
        from importlib import resources
        ref = resources.files("deskgrasp").joinpath("data/context_set.json")
        return cls.from_json(json.loads(ref.read_text()))

    def best_match(self, instruction: str):
        """(exemplar, overlap): most shared content tokens, earliest wins ties."""
        want = _content_tokens(instruction)
        best, best_n = None, 0
        for ex in self.exemplars:
            n = len(want & _content_tokens(ex.instruction))
            if n > best_n:
                best, best_n = ex, n
        return best, best_n


def _find_by_label(scene: SceneObservation, text: str):
    """Longest object label occurring as a substring of the text; None if none."""
    lowered = text.lower()
    hits = [o for o in scene.objects if o.label.lower() in lowered]
    return max(hits, key=lambda o: len(o.label)) if hits else None


def _bind_step_object(step: dict, exemplar: Exemplar, scene: SceneObservation,
                      instruction: str, bound: dict) -> SceneObject:
    """Map an exemplar step onto an object of the live scene.

    Order: reuse an object already bound to this role, then label mentioned in
    the instruction, then exact exemplar label, then shared label token, then
    same shape category as the exemplar's object.
    """
    role = step.get("role", "target")
    if role in bound:
        return bound[role]
    label = step["label"]
    candidates = []
    mentioned = _find_by_label(scene, instruction)
    if mentioned is not None:
        candidates.append(mentioned)
    candidates += [o for o in scene.objects if o.label.lower() == label.lower()]
    label_toks = _content_tokens(label)
    candidates += [o for o in scene.objects
                   if label_toks & _content_tokens(o.label)]
    ex_obj = next((o for o in exemplar.scene.objects
                   if o.label.lower() == label.lower()), None)
    if ex_obj is not None:
        candidates += [o for o in scene.objects
                       if o.shape.category == ex_obj.shape.category]
    for cand in candidates:
        if cand not in bound.values():
            bound[role] = cand
            return cand
    raise TargetNotFound(
        f"no object in the scene can play the {role!r} role "
        f"(exemplar label {label!r})")


def _instantiate_template(exemplar: Exemplar, scene: SceneObservation,
                          instruction: str) -> ActionPlan:
    bound: dict = {}
    steps = []
    for step in exemplar.steps:
        obj = _bind_step_object(step, exemplar, scene, instruction, bound)
        skill = step["skill"]
        if skill in GRASP_SKILLS:
            skill = select_skill(obj)     # re-derive from live geometry
        steps.append(PlanStep(skill=skill, label=obj.label, bbox=obj.bbox))
    response = (f"Following the {exemplar.instruction!r} routine: "
                + " then ".join(f"{s.skill} on the {s.label}" for s in steps) + ".")
    return ActionPlan(steps=steps, response=response)


def _iou(a, b) -> float:
    ix = max(0.0, min(a[2], b[2]) - max(a[0], b[0]))
    iy = max(0.0, min(a[3], b[3]) - max(a[1], b[1]))
    inter = ix * iy
    area = ((a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter)
    return inter / area if area > 0 else 0.0


def _resolve_remote(instruction: str, scene: SceneObservation,
                    interpreter) -> SceneObject:
    prompt = (f"Locate the object referenced by: {instruction}\n"
              "Reply with its bounding box as [x1, y1, x2, y2].")
    text = interpreter.query(prompt, scene.image or "")
    bbox = parse_bbox(text, scene.width, scene.height)
    if not scene.objects:
        raise TargetNotFound("scene contains no objects to match the box against")
    best = max(scene.objects, key=lambda o: _iou(o.bbox, bbox))
    if _iou(best.bbox, bbox) <= 0.0:
        raise TargetNotFound(
            f"interpreter box {list(bbox)} overlaps no scene object")
    return best


def plan(instruction: str, scene: SceneObservation,
         context: ContextSet | None = None, interpreter=None,
         min_template_overlap: int = 2) -> ActionPlan:
    """Instruction + observed scene -> ordered skill plan."""
    if not instruction or not instruction.strip():
        raise InputError("instruction must be non-empty")
    ctx = context if context is not None else ContextSet.default()

    exemplar, overlap = ctx.best_match(instruction)
    if (exemplar is not None and overlap >= min_template_overlap
            and len(exemplar.steps) > 1):
        return _instantiate_template(exemplar, scene, instruction)

    if interpreter is not None:
        target = _resolve_remote(instruction, scene, interpreter)
    else:
        target = _find_by_label(scene, instruction)
        if target is None:
            raise TargetNotFound(
                f"no scene object label occurs in {instruction!r}")
    skill = select_skill(target)
    steps = [PlanStep(skill=skill, label=target.label, bbox=target.bbox)]
    if set(_tokens(instruction)) & HANDOVER_VERBS:
        steps.append(PlanStep(skill="Delivery", label=target.label,
                              bbox=target.bbox))
    response = (f"I will {steps[0].skill} the {target.label}"
                + (" and deliver it to you." if len(steps) > 1 else "."))
    return ActionPlan(steps=steps, response=response)
