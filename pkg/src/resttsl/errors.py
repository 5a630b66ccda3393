"""Exception hierarchy.

Every error carries an ``exit_code`` used by the CLI: 2 for input or
validation problems, 3 for provider-side failures.
"""


class ResttslError(Exception):
    exit_code = 2


# openapi_model
class MalformedDocument(ResttslError):
    pass


class UnresolvableRef(ResttslError):
    pass


class DuplicateEndpoint(ResttslError):
    pass


class UnknownTag(ResttslError):
    pass


# tsl
class TslSyntax(ResttslError):
    pass


class MissingField(ResttslError):
    pass


class MatcherSyntax(ResttslError):
    pass


class DuplicateId(ResttslError):
    pass


# prompts
class UnknownLanguage(ResttslError):
    pass


class TemplateError(ResttslError):
    pass


class InvalidExamplePack(ResttslError):
    pass


class EmptyDocument(ResttslError):
    pass


class PlanMismatch(ResttslError):
    pass


# gateway
class ProviderFailure(ResttslError):
    exit_code = 3
    transient = False  # worth retrying


class AuthError(ProviderFailure):
    pass


class RateLimited(ProviderFailure):
    transient = True


class ProviderError(ProviderFailure):
    def __init__(self, message: str = "", transient: bool = False):
        super().__init__(message)
        self.transient = transient


class ProviderTimeout(ProviderFailure):
    transient = True


class TruncatedCompletion(ProviderFailure):
    pass


class CassetteMiss(ProviderFailure):
    pass


class NoRuleMatched(ProviderFailure):
    pass


class CassetteIoError(ResttslError):
    pass


# codegen
class ExtractionEmpty(ResttslError):
    pass


class MissingCases(ResttslError):
    def __init__(self, missing):
        self.missing = list(missing)
        super().__init__(f"case ids absent from every code block: {', '.join(self.missing)}")


class DuplicateCaseId(ResttslError):
    pass


class IncompleteSuite(ResttslError):
    pass


class UnknownFramework(ResttslError):
    pass


# metrics
class ZeroTests(ResttslError):
    pass


class InvalidWeights(ResttslError):
    pass


class EmptyInput(ResttslError):
    pass


class MalformedReport(ResttslError):
    pass


# orchestration
class ConfigError(ResttslError):
    pass


class MissingArtifact(ResttslError):
    pass


class ValidationFailed(ResttslError):
    pass
