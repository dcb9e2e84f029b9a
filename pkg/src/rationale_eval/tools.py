"""Builder for metric tool functions exposed to direct callers and the MCP server."""

from __future__ import annotations

from collections.abc import Callable, Mapping
from pathlib import Path
from typing import Any, Literal

from rationale_eval.baselines import BaselineBuilder
from rationale_eval.corpus import (
    DEFAULT_EOS,
    Schema,
    example_from_dict,
    serialize_input,
    serialize_target,
)
from rationale_eval.errors import InvalidConfig
from rationale_eval.harness import oracle_check as run_oracle_check
from rationale_eval.metrics import DEFAULT_EPSILON
from rationale_eval.metrics import interpret_sign as sign_of
from rationale_eval.scorer import FAMILIES
from rationale_eval.synth import SyntheticConfig, copy_channel_config, load_synthetic_config

ToolName = Literal[
    "oracle_check",
    "build_baseline",
    "serialize",
    "interpret_sign",
]

BUILTIN_SYNTHETIC = {"c_copy": copy_channel_config}


def resolve_synthetic_config(config: str | Mapping[str, Any]) -> SyntheticConfig:
    if isinstance(config, Mapping):
        return SyntheticConfig.from_dict(dict(config))
    if config in BUILTIN_SYNTHETIC:
        return BUILTIN_SYNTHETIC[config]()
    return load_synthetic_config(Path(config))


class MetricToolsBuilder:
    """Build callable metric tools around one baseline builder."""

    TOOL_NAMES: tuple[ToolName, ...] = (
        "oracle_check",
        "build_baseline",
        "serialize",
        "interpret_sign",
    )

    def __init__(self, baseline_builder: BaselineBuilder | None = None, auto_build: bool = True):
        self.baseline_builder = baseline_builder or BaselineBuilder()
        self._callable_tools: dict[str, tuple[Callable[..., Any], str]] | None = None
        if auto_build:
            self.refresh()

    def refresh(self) -> dict[str, tuple[Callable[..., Any], str]]:
        """Rebuild tools and rebind convenience callables on the builder instance."""
        self._callable_tools = self._generate_callable_tools()
        for name, (func, _) in self._callable_tools.items():
            setattr(self, name, func)
        return self._callable_tools

    def _metadata_suffix(self) -> str:
        available_tools = ", ".join(self.TOOL_NAMES)
        schemas = ", ".join(schema.value for schema in Schema)
        families = ", ".join(FAMILIES)
        synthetic = ", ".join(BUILTIN_SYNTHETIC)
        return (
            f"\n\nExposed tools: {available_tools}\nDataset schemas: {schemas}"
            f"\nEvaluator families: {families}\nBuilt-in synthetic configs: {synthetic}"
        )

    def _generate_callable_tools(self) -> dict[str, tuple[Callable[..., Any], str]]:
        """
        Build base callables with dynamic descriptions.

        Returns:
            Mapping of tool name to `(callable, description)`.
        """
        suffix = self._metadata_suffix()
        tools: dict[str, tuple[Callable[..., Any], str]] = {}

        def oracle_check(
            config: str | dict[str, Any] = "c_copy", n: int = 100_000, seed: int = 0
        ) -> dict[str, Any]:
            return run_oracle_check(resolve_synthetic_config(config), n=n, seed=seed).to_dict()

        tools["oracle_check"] = (
            oracle_check,
            "Compare corpus REV of the exact Bayes scorer with the enumerated conditional "
            "mutual information of a synthetic joint (built-in name, JSON path or table)."
            + suffix,
        )

        def build_baseline(example: dict[str, Any], label: str) -> dict[str, str]:
            return self.baseline_builder.build(example_from_dict(example), label).to_dict()

        tools["build_baseline"] = (
            build_baseline,
            "Build the vacuous baseline rationale for an example and a candidate label." + suffix,
        )

        def serialize(
            example: dict[str, Any],
            setting: str,
            label: str | None = None,
            rationale: str | None = None,
        ) -> dict[str, str | None]:
            parsed = example_from_dict(example)
            target = None
            rationale = rationale if rationale is not None else parsed.gold_rationale
            if rationale:
                label = label or parsed.gold_label
                target = serialize_target(label, rationale, setting, DEFAULT_EOS)
            return {"input": serialize_input(parsed, setting), "target": target}

        tools["serialize"] = (
            serialize,
            "Render an example in the bracket-tag task-model format for XY*->R, X->YR or X->RY."
            + suffix,
        )

        def interpret_sign(rev: float, epsilon: float = DEFAULT_EPSILON) -> str:
            return sign_of(rev, epsilon).value

        tools["interpret_sign"] = (
            interpret_sign,
            "Map a REV value to its sign reading, with `epsilon` as the zero band." + suffix,
        )

        for name, (func, desc) in tools.items():
            setattr(func, "__name__", name)
            setattr(func, "__doc__", desc)
        return tools

    def build_callable_tools(
        self, force_rebuild: bool = False
    ) -> dict[str, tuple[Callable[..., Any], str]]:
        if force_rebuild or self._callable_tools is None:
            return self.refresh()
        return self._callable_tools

    # Convenience methods for direct library usage with static typing support.
    def oracle_check(
        self, config: str | dict[str, Any] = "c_copy", n: int = 100_000, seed: int = 0
    ) -> dict[str, Any]:
        fn = self.build_callable_tools()["oracle_check"][0]
        return fn(config, n, seed)

    def build_baseline(self, example: dict[str, Any], label: str) -> dict[str, str]:
        fn = self.build_callable_tools()["build_baseline"][0]
        return fn(example, label)

    def serialize(
        self,
        example: dict[str, Any],
        setting: str,
        label: str | None = None,
        rationale: str | None = None,
    ) -> dict[str, str | None]:
        fn = self.build_callable_tools()["serialize"][0]
        return fn(example, setting, label, rationale)

    def interpret_sign(self, rev: float, epsilon: float = DEFAULT_EPSILON) -> str:
        fn = self.build_callable_tools()["interpret_sign"][0]
        return fn(rev, epsilon)


def create_metric_tools(
    baseline_builder: BaselineBuilder | None = None,
) -> dict[str, tuple[Callable[..., Any], str]]:
    """Create dynamic callable tools for direct Python integration."""
    return MetricToolsBuilder(baseline_builder).build_callable_tools()


def get_tool(
    tool_name: ToolName, baseline_builder: BaselineBuilder | None = None
) -> Callable[..., Any]:
    """Return one callable tool with dynamic docstring set."""
    tools = create_metric_tools(baseline_builder)
    if tool_name not in tools:
        raise InvalidConfig(f"[tools] unknown tool {tool_name!r}; available: {sorted(tools)}")
    func, description = tools[tool_name]
    func.__doc__ = description
    return func
