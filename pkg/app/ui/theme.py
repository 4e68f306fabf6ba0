from dataclasses import dataclass


@dataclass(frozen=True)
class UITheme:
    name: str
    primary: str
    accent: str
    text: str
    dim: str
    success: str
    warning: str
    error: str
    panel_border: str


class Themes:
    DESK = UITheme(
        name="Desk",
        primary="cyan",
        accent="magenta",
        text="white",
        dim="dim white",
        success="green",
        warning="yellow",
        error="red",
        panel_border="blue",
    )

    # Monochrome for logs and terminals without colour
    PLAIN = UITheme(
        name="Plain",
        primary="bold",
        accent="bold",
        text="default",
        dim="dim",
        success="default",
        warning="bold",
        error="bold",
        panel_border="default",
    )

    @classmethod
    def get(cls, name: str) -> UITheme:
        return {"desk": cls.DESK, "plain": cls.PLAIN}.get(name.lower(), cls.DESK)
