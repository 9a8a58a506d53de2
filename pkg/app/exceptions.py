"""
Exceptions cho EMHD simulator
Mỗi lớp lỗi ứng với một exit code của command line (xem EXIT_CODES)
"""

from typing import Dict, List, Optional, Type


class EMHDError(Exception):
    """Base class cho mọi lỗi của package"""


# ================================================================
# VALIDATION (exit 1)
# ================================================================

class ConfigError(EMHDError, ValueError):
    """Config không hợp lệ: unknown key, giá trị ngoài range, ..."""

    def __init__(self, message: str, key: Optional[str] = None):
        super().__init__(message)
        self.key = key


class GridMismatchError(ConfigError):
    """Hai field không cùng GridSpec"""


class AuditError(EMHDError):
    """Energy audit thiếu dữ liệu (ví dụ: không có j ở mỗi step)"""


class FitError(EMHDError):
    """Không đủ điểm dương để fit log-log"""


class OracleFailure(EMHDError):
    """Một hoặc nhiều oracle check không đạt tolerance"""


# ================================================================
# NUMERICAL BLOW-UP (exit 2)
# ================================================================

class BlowUpError(EMHDError):
    """
    NaN/Inf xuất hiện trong state

    Attributes:
        t: thời điểm phát hiện
        norm_trace: các giá trị norm (t, ‖u‖, ‖E‖, ‖B‖) trước khi hỏng
    """

    def __init__(self, message: str, t: float, norm_trace: Optional[List[tuple]] = None):
        super().__init__(f"{message} (t={t:.6g})")
        self.t = t
        self.norm_trace = norm_trace or []


class CFLViolationError(BlowUpError):
    """Courant number vượt 2 lần giới hạn ổn định"""


# ================================================================
# I/O (exit 3)
# ================================================================

class StorageError(EMHDError, OSError):
    """Lỗi đọc/ghi file kèm path"""

    def __init__(self, message: str, path: Optional[str] = None):
        super().__init__(f"{message}: {path}" if path else message)
        self.path = path


class CheckpointVersionError(StorageError):
    """Checkpoint có version/magic lạ"""


class CheckpointTruncatedError(StorageError):
    """Payload ngắn hơn kích thước ghi trong header"""


# ================================================================
# EXIT CODES
# ================================================================

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_BLOWUP = 2
EXIT_IO = 3

EXIT_CODES: Dict[Type[BaseException], int] = {
    BlowUpError: EXIT_BLOWUP,
    StorageError: EXIT_IO,
    ConfigError: EXIT_VALIDATION,
    AuditError: EXIT_VALIDATION,
    FitError: EXIT_VALIDATION,
    OracleFailure: EXIT_VALIDATION,
    OSError: EXIT_IO,
    ValueError: EXIT_VALIDATION,
}


def exit_code_for(exc: BaseException) -> int:
    """Exit code theo thứ tự ưu tiên của EXIT_CODES (MRO của exception)"""
    for klass in type(exc).__mro__:
        if klass in EXIT_CODES:
            return EXIT_CODES[klass]
    return EXIT_VALIDATION
