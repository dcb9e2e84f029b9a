"""FastMCP server wiring for rationale_eval."""

from __future__ import annotations

from typing import Any

from rationale_eval.baselines import BaselineBuilder
from rationale_eval.tools import MetricToolsBuilder


def create_mcp_server(
    server_name: str = "rationale_eval", baseline_builder: BaselineBuilder | None = None
) -> Any:
    """Create a FastMCP server exposing the metric tool operations."""
    fastmcp_module = __import__("fastmcp", fromlist=["FastMCP"])
    fastmcp_class = getattr(fastmcp_module, "FastMCP")

    mcp = fastmcp_class(server_name)
    tools = MetricToolsBuilder(baseline_builder).build_callable_tools()

    oracle_func, oracle_desc = tools["oracle_check"]
    baseline_func, baseline_desc = tools["build_baseline"]
    serialize_func, serialize_desc = tools["serialize"]
    sign_func, sign_desc = tools["interpret_sign"]

    @mcp.tool(description=oracle_desc)
    def oracle_check(
        config: str | dict[str, Any] = "c_copy", n: int = 100_000, seed: int = 0
    ) -> dict[str, Any]:
        return oracle_func(config=config, n=n, seed=seed)

    @mcp.tool(description=baseline_desc)
    def build_baseline(example: dict[str, Any], label: str) -> dict[str, str]:
        return baseline_func(example=example, label=label)

    @mcp.tool(description=serialize_desc)
    def serialize(
        example: dict[str, Any],
        setting: str,
        label: str | None = None,
        rationale: str | None = None,
    ) -> dict[str, str | None]:
        return serialize_func(example=example, setting=setting, label=label, rationale=rationale)

    @mcp.tool(description=sign_desc)
    def interpret_sign(rev: float, epsilon: float = 1e-6) -> str:
        return sign_func(rev=rev, epsilon=epsilon)

    return mcp
