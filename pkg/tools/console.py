"""
tools/console.py
Coloured status lines for command-line runs
"""

from typing import Iterable, Optional, TypeVar

from colorama import Fore, Style, init as colorama_init
from tqdm import tqdm

T = TypeVar("T")

colorama_init(autoreset=True)

_quiet = False


def set_quiet(quiet: bool = True):
    """Silence (or restore) all status output"""
    global _quiet
    _quiet = quiet


def is_quiet() -> bool:
    return _quiet


def _emit(icon: str, color: str, message: str):
    if _quiet:
        return
    print(f"{color}{icon} {message}{Style.RESET_ALL}")


def info(message: str):
    _emit("ℹ️ ", Fore.CYAN, message)


def ok(message: str):
    _emit("✅", Fore.GREEN, message)


def warn(message: str):
    _emit("⚠️ ", Fore.YELLOW, message)


def fail(message: str):
    # failures are shown even in quiet mode
    print(f"{Fore.RED}❌ {message}{Style.RESET_ALL}")


def step(message: str):
    _emit("🔧", Fore.WHITE, message)


def banner(title: str, width: int = 70):
    """Print a boxed section title"""
    if _quiet:
        return
    print("=" * width)
    print(f"{Style.BRIGHT}{title.center(width)}{Style.RESET_ALL}")
    print("=" * width)


def progress(items: Iterable[T], desc: str, total: Optional[int] = None) -> Iterable[T]:
    """Wrap an iterable in a tqdm bar unless quiet"""
    return tqdm(items, desc=desc, total=total, disable=_quiet, leave=False)
