use std::fmt;

/// Exit status 1 for bad input, 2 for everything that fails at run time.
#[derive(Debug)]
pub enum Failure {
    Invalid(String),
    Runtime(String),
}

pub type Outcome<T> = Result<T, Failure>;

impl Failure {
    pub fn invalid(e: impl fmt::Display) -> Self {
        Failure::Invalid(e.to_string())
    }

    pub fn runtime(e: impl fmt::Display) -> Self {
        Failure::Runtime(e.to_string())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Invalid(_) => 1,
            Failure::Runtime(_) => 2,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Invalid(m) => write!(f, "invalid input: {m}"),
            Failure::Runtime(m) => write!(f, "error: {m}"),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

pub trait OrInvalid<T> {
    fn or_invalid(self, context: impl fmt::Display) -> Outcome<T>;
}

impl<T, E: fmt::Display> OrInvalid<T> for Result<T, E> {
    fn or_invalid(self, context: impl fmt::Display) -> Outcome<T> {
        self.map_err(|e| Failure::Invalid(format!("{context}: {e}")))
    }
}

pub trait OrRuntime<T> {
    fn or_runtime(self, context: impl fmt::Display) -> Outcome<T>;
}

impl<T, E: fmt::Display> OrRuntime<T> for Result<T, E> {
    fn or_runtime(self, context: impl fmt::Display) -> Outcome<T> {
        self.map_err(|e| Failure::Runtime(format!("{context}: {e}")))
    }
}
