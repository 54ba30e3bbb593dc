from dataclasses import dataclass, field
from enum import Enum
from typing import Any
import json


class ServiceStatus(str, Enum):
    success = "success"
    error = "error"
    invalid_config = "invalid_config"
    assumption_violation = "assumption_violation"
    numerical_failure = "numerical_failure"


# статус -> код выхода CLI
EXIT_CODES = {
    ServiceStatus.success: 0,
    ServiceStatus.error: 1,
    ServiceStatus.invalid_config: 2,
    ServiceStatus.assumption_violation: 3,
    ServiceStatus.numerical_failure: 4,
}


@dataclass
class ServiceResponse:
    """Унифицированный формат ответа сервисов"""
    status: ServiceStatus = ServiceStatus.success
    message: str = ""             # Сообщение при успешной операции
    error: str | None = None      # Сообщение об ошибке
    data: Any = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.status == ServiceStatus.success

    @property
    def exit_code(self) -> int:
        return EXIT_CODES[self.status]

    def to_dict(self) -> dict:
        """Конвертируем в словарь"""
        return {
            "status": self.status.value,
            "message": self.message,
            "error": self.error,
            "data": self.data
        }

    def to_json(self) -> str:
        """Конвертируем в JSON"""
        return json.dumps(self.to_dict(), ensure_ascii=False, default=str)
