from dependency_injector import containers, providers
from rich.console import Console

from .harness.reporting import ReportWriter


class Container(containers.DeclarativeContainer):
    """Defines the main container used for dependency injection."""

    config = providers.Configuration()

    console = providers.Singleton(Console)

    writer = providers.Factory(ReportWriter, path=config.output, console=console)
