"""
llm.py
======
Proveedores LLM intercambiables.

- `HttpChatProvider`: API de chat-completion compatible con OpenAI (requests), temperatura
  0, timeout y un único reintento.
- `ScriptedMockProvider`: respuestas guionizadas desde un directorio; totalmente
  determinista (para pruebas y para el escenario sintético).
"""

from abc import ABC, abstractmethod
import json
import math
import os
from pathlib import Path
import re
import threading

from loguru import logger
import requests

from shield.config import LLM_API_KEY_ENV, LLM_ENDPOINT_ENV, ProviderConfig
from shield.errors import ConfigError, EmptyResponse, ProviderError
from shield.events import digest_text

THINK_BLOCK = re.compile(r"<think>.*?(</think>|$)", re.IGNORECASE | re.DOTALL)
LEADING_THINK = re.compile(r"^\s*think\s*:.*?(\n\s*\n|$)", re.IGNORECASE | re.DOTALL)


def count_tokens(text: str) -> int:
    """Contador de tokens por defecto: caracteres / 4, redondeado hacia arriba."""
    return math.ceil(len(text) / 4)


def strip_reasoning(text: str) -> str:
    """Elimina los bloques <think>…</think> y una sección inicial "Think:"."""
    text = THINK_BLOCK.sub("", text)
    return LEADING_THINK.sub("", text, count=1).strip()


def prompt_digest(prompt: str) -> str:
    return digest_text(prompt)


# ======================================================
# Clase base
# ======================================================
class LlmProvider(ABC):
    kind: str = "abstract"

    def __init__(self, model_id: str):
        self.model_id = model_id

    @abstractmethod
    def complete(self, prompt: str) -> str:
        """Devuelve el texto de la respuesta; EmptyResponse si viene vacía."""

    def meta(self, prompt: str) -> dict[str, str]:
        return {"kind": self.kind, "model_id": self.model_id, "prompt_hash": prompt_digest(prompt)}


def complete_with_retry(provider: LlmProvider, prompt: str) -> str:
    """Una respuesta vacía se reintenta una vez; la segunda se propaga."""
    try:
        return provider.complete(prompt)
    except EmptyResponse:
        logger.warning("⚠️ Respuesta vacía del proveedor LLM, reintentando una vez")
        return provider.complete(prompt)


# ======================================================
# Proveedor HTTP
# ======================================================
class HttpChatProvider(LlmProvider):
    kind = "http-chat"

    def __init__(
        self,
        endpoint: str,
        model_id: str,
        api_key: str | None = None,
        timeout_s: float = 120.0,
    ):
        super().__init__(model_id)
        endpoint = endpoint.rstrip("/")
        if not endpoint.endswith("chat/completions"):
            endpoint = f"{endpoint}/chat/completions"
        self.url = endpoint
        self.api_key = api_key
        self.timeout_s = timeout_s

    def _post(self, prompt: str) -> requests.Response:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        payload = {
            "model": self.model_id,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": 0,
        }
        return requests.post(self.url, json=payload, headers=headers, timeout=self.timeout_s)

    def complete(self, prompt: str) -> str:
        last_error: Exception | None = None
        for attempt in range(2):
            try:
                response = self._post(prompt)
                if response.status_code in (401, 403):
                    raise ProviderError(
                        f"Credenciales rechazadas por {self.url} ({response.status_code})"
                    )
                response.raise_for_status()
                content = response.json()["choices"][0]["message"]["content"]
                break
            except requests.RequestException as e:
                last_error = e
                logger.warning(f"⚠️ Intento {attempt + 1}/2 fallido contra {self.url}: {e}")
            except (KeyError, IndexError, TypeError, ValueError) as e:
                raise ProviderError(f"Respuesta de chat con formato inesperado: {e}") from e
        else:
            raise ProviderError(f"Fallo de red con el proveedor LLM: {last_error}") from last_error

        if not isinstance(content, str) or not content.strip():
            raise EmptyResponse("El proveedor LLM devolvió una respuesta vacía")
        return content


# ======================================================
# Proveedor guionizado
# ======================================================
class ScriptedMockProvider(LlmProvider):
    """
    Respuestas desde un directorio:

    1. `<sha256 del prompt>.txt` si existe.
    2. Si no, la primera regla de `rules.json` cuyo texto `contains` aparezca en el prompt:
       `[{"contains": "...", "response_file": "evidence.txt"}]` (o `"response"` en línea).

    Sin coincidencias se lanza ProviderError indicando el digest, para poder añadir
    la respuesta que falta.
    """

    kind = "scripted-mock"

    def __init__(self, directory: Path, model_id: str = "scripted-mock"):
        super().__init__(model_id)
        self.directory = Path(directory)
        if not self.directory.is_dir():
            raise ConfigError(f"No existe el directorio de respuestas del mock: {self.directory}")
        rules_path = self.directory / "rules.json"
        self.rules = []
        if rules_path.exists():
            try:
                self.rules = json.loads(rules_path.read_text(encoding="utf-8"))
            except json.JSONDecodeError as e:
                raise ConfigError(f"rules.json inválido en {self.directory}: {e}") from e
        self.calls = 0
        self._lock = threading.Lock()

    def complete(self, prompt: str) -> str:
        with self._lock:
            self.calls += 1
        digest = prompt_digest(prompt)
        by_digest = self.directory / f"{digest}.txt"
        if by_digest.exists():
            content = by_digest.read_text(encoding="utf-8")
        else:
            content = self._from_rules(prompt, digest)
        if not content.strip():
            raise EmptyResponse(f"Respuesta guionizada vacía para {digest}")
        return content

    def _from_rules(self, prompt: str, digest: str) -> str:
        for rule in self.rules:
            if rule.get("contains", "") in prompt:
                if "response" in rule:
                    return rule["response"]
                path = self.directory / rule["response_file"]
                if not path.exists():
                    raise ProviderError(f"Falta el archivo de respuesta {path}")
                return path.read_text(encoding="utf-8")
        raise ProviderError(f"Sin respuesta guionizada para el prompt {digest}")


# ======================================================
# Función: make_provider
# ======================================================
def make_provider(config: ProviderConfig, base_dir: Path | None = None) -> LlmProvider:
    """
    Construye el proveedor a partir de `ProviderConfig.spec`:

    - "mock:<dir>": ScriptedMockProvider (rutas relativas contra `base_dir`).
    - "http": HttpChatProvider; endpoint desde la configuración o SHIELD_LLM_ENDPOINT,
      credencial desde SHIELD_LLM_API_KEY.
    """
    spec = config.spec
    if spec.startswith("mock:"):
        directory = Path(spec.split(":", 1)[1])
        if base_dir is not None and not directory.is_absolute():
            directory = Path(base_dir) / directory
        return ScriptedMockProvider(directory, model_id=f"mock:{directory.name}")
    if spec == "http":
        endpoint = config.endpoint or os.getenv(LLM_ENDPOINT_ENV)
        if not endpoint:
            raise ConfigError(f"El proveedor http necesita endpoint o {LLM_ENDPOINT_ENV}")
        return HttpChatProvider(
            endpoint, config.model_id, os.getenv(LLM_API_KEY_ENV), config.timeout_s
        )
    raise ConfigError(f"Proveedor LLM desconocido: {spec}")
