from .models import ModelRepository
from .reports import ReportRepository

__all__ = ["ModelRepository", "ReportRepository"]
