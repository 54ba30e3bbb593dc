import logging
from dataclasses import dataclass
from functools import wraps
from json import JSONDecodeError

import numpy as np
from pydantic import ValidationError

from app.core.response import ServiceResponse, ServiceStatus


class SpectralDistillError(Exception):
    """Базовое исключение пакета"""


class DomainError(SpectralDistillError, ValueError):
    """Аргумент вне области определения операции"""


class ConfigError(SpectralDistillError):
    """Некорректный конфиг запуска"""


class ArgumentError(SpectralDistillError, ValueError):
    """Несогласованные аргументы (длины, размеры, диапазоны)"""


class UnsupportedError(SpectralDistillError):
    """Операция не определена для данной модели"""


class AssumptionViolation(SpectralDistillError):
    """Нарушено именованное предположение модели"""
    def __init__(self, assumption: str, detail: str = ""):
        self.assumption = assumption
        super().__init__(f"{assumption} violated" + (f": {detail}" if detail else ""))


class NumericalError(SpectralDistillError, ArithmeticError):
    """Неконечные интегралы, плохая обусловленность"""


class StructuralError(SpectralDistillError):
    """Нарушена структура корней знаменателя"""


class SynthesisError(SpectralDistillError):
    """Не найден допустимый порядок корней для параметров SD"""


@dataclass
class ErrorInfo:
    """Структура результата обработки ошибки"""
    message: str
    type: str
    level: str  # info | warning | error | critical
    status: ServiceStatus
    context: str | None = None


class ErrorHandler:
    """Централизованная классификация ошибок: сообщение, уровень, статус (код выхода)."""
    def __init__(self, logger: logging.Logger | None = None):
        self.logger = logger or logging.getLogger(self.__class__.__name__)

    def handle(self, e: BaseException, context: str = "") -> ErrorInfo:
        """Главный метод обработки ошибок"""
        invalid, violated, numeric = ServiceStatus.invalid_config, ServiceStatus.assumption_violation, ServiceStatus.numerical_failure
        # --- Классификация по типу ---
        if isinstance(e, ValidationError): info = ErrorInfo(f"Invalid configuration: {_short_validation(e)}", "ValidationError", "error", invalid, context)
        elif isinstance(e, JSONDecodeError): info = ErrorInfo(f"Config is not valid JSON: {e}", "JSONDecodeError", "error", invalid, context)
        elif isinstance(e, FileNotFoundError): info = ErrorInfo(f"File not found: {e.filename}", "FileNotFoundError", "error", invalid, context)
        elif isinstance(e, AssumptionViolation): info = ErrorInfo(str(e), "AssumptionViolation", "error", violated, context)
        elif isinstance(e, (ConfigError, DomainError, ArgumentError, UnsupportedError)): info = ErrorInfo(str(e), type(e).__name__, "error", invalid, context)
        elif isinstance(e, (NumericalError, StructuralError, SynthesisError)): info = ErrorInfo(str(e), type(e).__name__, "error", numeric, context)
        elif isinstance(e, np.linalg.LinAlgError): info = ErrorInfo(f"Linear algebra failure: {e}", "LinAlgError", "error", numeric, context)
        elif isinstance(e, FloatingPointError): info = ErrorInfo(f"Floating point failure: {e}", "FloatingPointError", "error", numeric, context)
        elif isinstance(e, OSError): info = ErrorInfo(f"I/O error: {e}", "OSError", "error", ServiceStatus.error, context)
        elif isinstance(e, KeyboardInterrupt): info = ErrorInfo("Interrupted by user.", "KeyboardInterrupt", "critical", ServiceStatus.error, context)
        else: info = ErrorInfo(f"Unexpected error: {type(e).__name__}: {e}", "UnexpectedError", "error", ServiceStatus.error, context)

        # --- Логирование ---
        log_message = f"[{info.context}] {info.message}" if info.context else info.message

        match info.level:
            case "info": self.logger.info(log_message)
            case "warning": self.logger.warning(log_message)
            case "error": self.logger.error(log_message, exc_info=info.type == "UnexpectedError")
            case "critical": self.logger.critical(log_message)

        return info


def _short_validation(e: ValidationError) -> str:
    parts = []
    for err in e.errors():
        loc = ".".join(str(p) for p in err.get("loc", ())) or "<root>"
        parts.append(f"{loc}: {err.get('msg')}")
    return "; ".join(parts)


def service_handler(default_msg: str = ""):
    """Декоратор: результат -> ServiceResponse, исключение -> ErrorHandler -> ServiceResponse"""
    def decorator(func):
        @wraps(func)
        def wrapper(self, *args, **kwargs):
            try:
                result = func(self, *args, **kwargs)
                # Если метод вернул ServiceResponse, возвращаем его
                if isinstance(result, ServiceResponse):
                    return result
                return ServiceResponse(status=ServiceStatus.success, message=default_msg or "done", data=result)
            except Exception as e:
                info = ErrorHandler(self.logger).handle(e, context=func.__name__)
                return ServiceResponse(status=info.status, message=default_msg or "failed", error=info.message)
        return wrapper
    return decorator
