from .provider import (
    AuthError,
    ChatRequest,
    LLMError,
    MockScript,
    ProviderConfig,
    ProviderKind,
    RateLimited,
    ScriptExhausted,
    TransportError,
    complete,
    mock_script,
)
from .steps import (
    GENERATION_STEPS,
    REPROMPT_BUDGET,
    SCHEMAS,
    ExtractionSchema,
    MissingContext,
    ParseFailure,
    Step,
    StepResult,
    Transcript,
    context_sections,
    load_template,
    parse_score,
    render_prompt,
    run_step,
)
