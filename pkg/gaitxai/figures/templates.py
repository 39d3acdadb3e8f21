from pathlib import Path
from typing import List, Optional

from jinja2 import Environment, FileSystemLoader, StrictUndefined

from gaitxai.core.errors import MissingInput

TEMPLATE_DIR = Path(__file__).parent / "templates"

_environment = Environment(
    loader=FileSystemLoader(str(TEMPLATE_DIR)),
    autoescape=lambda name: name is not None and ".svg" in name,
    undefined=StrictUndefined,
    keep_trailing_newline=True,
    trim_blocks=True,
    lstrip_blocks=True,
)


class FigureTemplate:
    """Named jinja2 template with a required-variable check before rendering"""

    def __init__(self, name: str, required_vars: Optional[List[str]] = None):
        self.name = name
        self.required_vars = required_vars or []

    def render(self, **kwargs) -> str:
        missing_vars = [var for var in self.required_vars if var not in kwargs]
        if missing_vars:
            raise MissingInput(f"template {self.name} is missing variables: {missing_vars}")
        return _environment.get_template(self.name).render(**kwargs)


class FigureTemplateLibrary:
    """Templates for the report figures"""

    # One panel: a row of channel subplots drawn from primitive shapes
    PANEL = FigureTemplate("panel.svg.j2", required_vars=["title", "width", "height", "subplots"])

    # Region overlap and literature consistency table
    OVERLAP_TABLE = FigureTemplate(
        "overlap_table.txt.j2",
        required_vars=["pairs", "consistency", "mass_fraction"],
    )
