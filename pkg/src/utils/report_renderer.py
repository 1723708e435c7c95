"""
Report Template Renderer

Renders markdown reports (the ablation comparison table) from Jinja2
templates. Templates are looked up in an optional override directory first,
then in the project's templates/ directory.
"""

from __future__ import annotations

from pathlib import Path
from typing import Any, Dict, Optional

from jinja2 import Environment, FileSystemLoader, TemplateNotFound, select_autoescape

from config.settings import PROJECT_ROOT
from src.utils.validation_utils import ArtifactNotFoundError

# Project report templates directory
TEMPLATES_DIR = PROJECT_ROOT / "templates"


def format_metric(value: Any, digits: int = 4) -> str:
    """Fixed-precision number, or n/a for missing values."""
    if value is None:
        return "n/a"
    if isinstance(value, float):
        return f"{value:.{digits}f}"
    return str(value)


def create_jinja_environment(templates_dir: Path) -> Environment:
    """
    Create a Jinja2 environment for report rendering.

    Args:
        templates_dir: Directory containing report templates

    Returns:
        Configured Jinja2 Environment with the ``metric`` filter
    """
    env = Environment(
        loader=FileSystemLoader(str(templates_dir)),
        autoescape=select_autoescape(enabled_extensions=(), default=False),
        trim_blocks=True,
        lstrip_blocks=True,
    )
    env.filters["metric"] = format_metric
    return env


def render_report(
    template_name: str,
    context: Dict[str, Any],
    templates_dir: Optional[Path] = None,
) -> str:
    """
    Render a report template with the given context.

    Looks for the template in this order:
    1. templates_dir (if provided)
    2. The project's templates/ directory

    Raises:
        ArtifactNotFoundError: If the template exists in neither location
    """
    for directory in (templates_dir, TEMPLATES_DIR):
        if directory is None or not (directory / template_name).exists():
            continue
        try:
            return create_jinja_environment(directory).get_template(template_name).render(**context)
        except TemplateNotFound:
            continue
    raise ArtifactNotFoundError(f"Report template '{template_name}' not found")


__all__ = ["TEMPLATES_DIR", "format_metric", "create_jinja_environment", "render_report"]
