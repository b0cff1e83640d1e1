class AdapterError(Exception):
    pass


class EncoderUnavailable(AdapterError):
    """Requested encoder weights cannot be loaded in this environment."""


class UnreadableInput(AdapterError):
    pass


class UsageError(AdapterError):
    pass
