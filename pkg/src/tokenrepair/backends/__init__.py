from .base import Backend, BackendCapabilities, GenerationRequest
from .mock import MockBackend, MockModelScript

__all__ = ["Backend", "BackendCapabilities", "GenerationRequest", "MockBackend", "MockModelScript",
           "HttpBackend"]


def __getattr__(name):
    # httpx is only needed when the HTTP client is actually used
    if name == "HttpBackend":
        from .http import HttpBackend
        return HttpBackend
    raise AttributeError(name)
