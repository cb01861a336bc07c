"""End-to-end inference: instruction -> skill plan -> per-skill policy actions.

Each skill primitive is bound to its own trained checkpoint through a JSON
registry.  For every planned step the corresponding policy maps the scene's
observation image to an action, optionally refined by a fitted mixture, and
the executed steps are serialized as a JSON trace.  With fixed checkpoints,
scene, and instruction the trace is bit-reproducible.
"""

from __future__ import annotations

import json
import os

from .checkpoint import load_model
from .dataset import pixels_to_image, read_ppm
from .errors import InputError, SkillModelMissing
from .gmm import GmmModel
from .skills import SKILLS, ContextSet, SceneObservation, plan

REGISTRY_VERSION = 1


def load_registry(path: str) -> dict:
    """Registry JSON {"version": 1, "skills": {name: ckpt path}} -> name->path.

    Relative checkpoint paths are resolved against the registry file's
    directory so a registry can travel with its checkpoints.
    """
    with open(path) as f:
        obj = json.load(f)
    if obj.get("version") != REGISTRY_VERSION:
        raise InputError(f"unsupported skill registry version {obj.get('version')!r}")
    skills = obj.get("skills")
    if not isinstance(skills, dict):
        raise InputError("skill registry missing 'skills' object")
    base = os.path.dirname(os.path.abspath(path))
    resolved = {}
    for name, ckpt in skills.items():
        if name not in SKILLS:
            raise InputError(f"registry names unknown skill {name!r}")
        resolved[name] = ckpt if os.path.isabs(ckpt) else os.path.join(base, ckpt)
    return resolved


class SkillExecutor:
    """Loads and caches one policy per registered skill."""

    def __init__(self, registry: dict):
        self.registry = dict(registry)
        self._cache: dict = {}

    def model_for(self, skill: str):
        if skill not in self.registry:
            raise SkillModelMissing(
                f"no checkpoint registered for skill {skill!r}; "
                f"registered: {sorted(self.registry)}")
        path = self.registry[skill]
        if path not in self._cache:
            if not os.path.exists(path):
                raise SkillModelMissing(
                    f"checkpoint for skill {skill!r} not found at {path}")
            self._cache[path] = load_model(path)
        return self._cache[path]


def _load_observation(scene: SceneObservation):
    if not scene.image:
        raise InputError(
            "scene has no observation image; the pipeline needs a PPM to "
            "feed the visuomotor policy")
    return pixels_to_image(read_ppm(scene.image))


def run_inference_pipeline(instruction: str, scene: SceneObservation,
                           registry: dict, context: ContextSet | None = None,
                           gmm: GmmModel | None = None,
                           interpreter=None) -> dict:
    """Plan, then execute each planned skill's policy on the observation."""
    action_plan = plan(instruction, scene, context=context,
                       interpreter=interpreter)
    executor = SkillExecutor(registry)
    # Fail before executing anything if any planned skill lacks a model.
    for step in action_plan.steps:
        executor.model_for(step.skill)
    observation = _load_observation(scene)
    steps = []
    for step in action_plan.steps:
        model = executor.model_for(step.skill)
        raw = model(observation[None]).data[0]
        action = gmm.refine_action(raw) if gmm is not None else raw
        steps.append({
            "skill": step.skill,
            "label": step.label,
            "bbox": list(step.bbox),
            "action": [float(a) for a in action],
            "config_digest": model.config.digest(),
        })
    return {
        "version": 1,
        "instruction": instruction,
        "response": action_plan.response,
        "plan": [s.skill for s in action_plan.steps],
        "refined": gmm is not None,
        "steps": steps,
    }


def trace_to_json(trace: dict) -> str:
    return json.dumps(trace, sort_keys=True, indent=2) + "\n"
