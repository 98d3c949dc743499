"""Exception hierarchy shared across the engine."""

from __future__ import annotations


class AnnError(Exception):
    """Base class for every error raised by this package."""


# graph-core


class CycleDetected(AnnError):
    pass


class MissingBinding(AnnError):
    def __init__(self, placeholder: str):
        super().__init__(f"no binding for placeholder {{{placeholder}}}")
        self.placeholder = placeholder


class UnusedBindingWarning(UserWarning):
    pass


# llm-gateway


class ProviderError(AnnError):
    """A failure talking to the chat backend."""


class TransientProviderError(ProviderError):
    """Failures worth retrying."""


class Timeout(TransientProviderError):
    pass


class RateLimited(TransientProviderError):
    pass


class MalformedProviderReply(ProviderError):
    pass


class NoMatchingRule(ProviderError):
    pass


class ParseError(AnnError):
    """The model replied, but not in the shape we asked for."""


class MissingTag(ParseError):
    pass


class UnbalancedTag(ParseError):
    pass


class UnrecognizedVerdict(ParseError):
    pass


# forward-engine


class UnresolvableVariable(AnnError):
    def __init__(self, node: str, placeholder: str, detail: str = ""):
        msg = f"node {node!r} cannot resolve {{{placeholder}}}"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)
        self.node = node
        self.placeholder = placeholder


class NodeExecutionFailed(AnnError):
    def __init__(self, node: str, cause: BaseException):
        super().__init__(f"node {node!r} failed: {cause}")
        self.node = node
        self.cause = cause


class LayerExecutionFailed(AnnError):
    def __init__(self, layer_index: int, cause: BaseException):
        super().__init__(f"layer {layer_index} failed: {cause}")
        self.layer_index = layer_index
        self.cause = cause


# evaluation


class JudgeUnparseable(ParseError):
    pass


class RubricUnparseable(ParseError):
    pass


class MixedOutcomeKinds(AnnError):
    pass


# backward-engine


class GradientUnparseable(ParseError):
    pass


class LayerwiseUnparseable(ParseError):
    pass


class EditBudgetExceeded(AnnError):
    pass


# cli / persistence


class ConfigInvalid(AnnError):
    def __init__(self, problems: list[str]):
        super().__init__("invalid configuration:\n" + "\n".join(f"  {p}" for p in problems))
        self.problems = problems


class PathExists(AnnError):
    pass
