use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// A malformed line in one of the tab-separated seed files.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("line {line}: {reason}")]
pub struct SeedParseError {
    pub line: usize,
    pub reason: String,
}

/// Every failure a platform operation can report.
///
/// [`Error::code`] is the stable wire name; it is always the variant name.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    // geometry
    #[error("invalid coordinate ({lat}, {lon})")]
    InvalidCoordinate { lat: f64, lon: f64 },
    #[error("point is {meters:.0} m from the projection origin")]
    OutOfProjectionRange { meters: f64 },

    // localization
    #[error("not enough beacons: need {needed}, got {got}")]
    InsufficientBeacons { needed: usize, got: usize },
    #[error("degenerate beacon geometry: {0}")]
    DegenerateGeometry(String),
    #[error("solver did not converge within {0} iterations")]
    NoConvergence(usize),
    #[error("measurements admit more than one position")]
    AmbiguousSolution,
    #[error("no fixes to choose from")]
    EmptyInput,
    #[error("invalid measurement: {0}")]
    InvalidMeasurement(String),

    // location store
    #[error("position update is older than the stored fix")]
    StaleUpdate,
    #[error("radius {0} m outside (0, 50000]")]
    RadiusOutOfRange(f64),

    // identity
    #[error("username {0:?} is already taken")]
    DuplicateUsername(String),
    #[error("required field {0:?} is missing")]
    MissingField(&'static str),
    #[error("invalid e-mail address")]
    InvalidEmail,
    #[error("phone must be 5 to 20 digits")]
    InvalidPhone,
    #[error("code does not match")]
    BadCode,
    #[error("code has expired")]
    Expired,
    #[error("account is already activated")]
    AlreadyActivated,
    #[error("wrong username or password")]
    BadCredentials { recovery_hint: bool },
    #[error("account has not been activated")]
    NotActivated,
    #[error("unknown user {0:?}")]
    UnknownUser(String),
    #[error("missing, invalid or expired session")]
    Unauthorized,
    #[error("field {0:?} cannot be changed")]
    ImmutableField(&'static str),

    // social graph
    #[error("cannot befriend yourself")]
    SelfFriendship,
    #[error("already friends")]
    AlreadyFriends,
    #[error("no pending friend request")]
    NoPendingRequest,
    #[error("default groups cannot be renamed or deleted")]
    DefaultGroupProtected,
    #[error("group {0:?} already exists")]
    DuplicateGroupName(String),
    #[error("unknown group {0:?}")]
    UnknownGroup(String),
    #[error("viewer has no stored position")]
    NoFixForViewer,

    // messaging
    #[error("recipient is not a friend")]
    NotFriends,
    #[error("message body exceeds {0} characters")]
    BodyTooLarge(usize),
    #[error("mail does not belong to caller")]
    NotYourMail,
    #[error("payload of {0} bytes exceeds the limit")]
    TooLarge(usize),
    #[error("unknown blob {0}")]
    UnknownBlob(String),

    // content
    #[error("target is not visible")]
    NotVisible,
    #[error("text exceeds {0} characters")]
    TooLong(usize),
    #[error("post is already published")]
    AlreadyPublished,
    #[error("unknown album {0}")]
    UnknownAlbum(u64),
    #[error("unknown photo {0}")]
    UnknownPhoto(u64),

    // local information
    #[error("unknown city {0:?}")]
    UnknownCity(String),
    #[error("weather provider unavailable: {0}")]
    ProviderUnavailable(String),
    #[error("unknown news section {0:?}")]
    UnknownSection(String),
    #[error("administrator rights required")]
    NotAdmin,
    #[error("unknown post {0}")]
    UnknownPost(u64),
    #[error("post is not approved")]
    NotApproved,

    // gateway
    #[error("query must be \"City, Country\"")]
    MalformedQuery,
    #[error("tile coordinates out of range")]
    TileOutOfRange,
    #[error("tile upstream unavailable: {0}")]
    UpstreamUnavailable(String),
    #[error("corrupt log: {0}")]
    CorruptLog(String),
    #[error("storage failure: {0}")]
    StorageFailure(String),
    #[error("bad request: {0}")]
    BadRequest(String),
    #[error("no such resource")]
    NotFound,
}

impl Error {
    /// Stable machine-readable code.
    pub fn code(&self) -> &'static str {
        use Error::*;
        match self {
            InvalidCoordinate { .. } => "InvalidCoordinate",
            OutOfProjectionRange { .. } => "OutOfProjectionRange",
            InsufficientBeacons { .. } => "InsufficientBeacons",
            DegenerateGeometry(_) => "DegenerateGeometry",
            NoConvergence(_) => "NoConvergence",
            AmbiguousSolution => "AmbiguousSolution",
            EmptyInput => "EmptyInput",
            InvalidMeasurement(_) => "InvalidMeasurement",
            StaleUpdate => "StaleUpdate",
            RadiusOutOfRange(_) => "RadiusOutOfRange",
            DuplicateUsername(_) => "DuplicateUsername",
            MissingField(_) => "MissingField",
            InvalidEmail => "InvalidEmail",
            InvalidPhone => "InvalidPhone",
            BadCode => "BadCode",
            Expired => "Expired",
            AlreadyActivated => "AlreadyActivated",
            BadCredentials { .. } => "BadCredentials",
            NotActivated => "NotActivated",
            UnknownUser(_) => "UnknownUser",
            Unauthorized => "Unauthorized",
            ImmutableField(_) => "ImmutableField",
            SelfFriendship => "SelfFriendship",
            AlreadyFriends => "AlreadyFriends",
            NoPendingRequest => "NoPendingRequest",
            DefaultGroupProtected => "DefaultGroupProtected",
            DuplicateGroupName(_) => "DuplicateGroupName",
            UnknownGroup(_) => "UnknownGroup",
            NoFixForViewer => "NoFixForViewer",
            NotFriends => "NotFriends",
            BodyTooLarge(_) => "BodyTooLarge",
            NotYourMail => "NotYourMail",
            TooLarge(_) => "TooLarge",
            UnknownBlob(_) => "UnknownBlob",
            NotVisible => "NotVisible",
            TooLong(_) => "TooLong",
            AlreadyPublished => "AlreadyPublished",
            UnknownAlbum(_) => "UnknownAlbum",
            UnknownPhoto(_) => "UnknownPhoto",
            UnknownCity(_) => "UnknownCity",
            ProviderUnavailable(_) => "ProviderUnavailable",
            UnknownSection(_) => "UnknownSection",
            NotAdmin => "NotAdmin",
            UnknownPost(_) => "UnknownPost",
            NotApproved => "NotApproved",
            MalformedQuery => "MalformedQuery",
            TileOutOfRange => "TileOutOfRange",
            UpstreamUnavailable(_) => "UpstreamUnavailable",
            CorruptLog(_) => "CorruptLog",
            StorageFailure(_) => "StorageFailure",
            BadRequest(_) => "BadRequest",
            NotFound => "NotFound",
        }
    }

    /// Set only for failed logins, telling clients to offer password recovery.
    pub fn recovery_hint(&self) -> Option<bool> {
        match self {
            Error::BadCredentials { recovery_hint } => Some(*recovery_hint),
            _ => None,
        }
    }

    /// One sample of every variant, for code-table audits.
    pub fn samples() -> Vec<Error> {
        use Error::*;
        vec![
            InvalidCoordinate { lat: 0.0, lon: 0.0 },
            OutOfProjectionRange { meters: 0.0 },
            InsufficientBeacons { needed: 3, got: 0 },
            DegenerateGeometry(String::new()),
            NoConvergence(0),
            AmbiguousSolution,
            EmptyInput,
            InvalidMeasurement(String::new()),
            StaleUpdate,
            RadiusOutOfRange(0.0),
            DuplicateUsername(String::new()),
            MissingField("x"),
            InvalidEmail,
            InvalidPhone,
            BadCode,
            Expired,
            AlreadyActivated,
            BadCredentials { recovery_hint: true },
            NotActivated,
            UnknownUser(String::new()),
            Unauthorized,
            ImmutableField("x"),
            SelfFriendship,
            AlreadyFriends,
            NoPendingRequest,
            DefaultGroupProtected,
            DuplicateGroupName(String::new()),
            UnknownGroup(String::new()),
            NoFixForViewer,
            NotFriends,
            BodyTooLarge(0),
            NotYourMail,
            TooLarge(0),
            UnknownBlob(String::new()),
            NotVisible,
            TooLong(0),
            AlreadyPublished,
            UnknownAlbum(0),
            UnknownPhoto(0),
            UnknownCity(String::new()),
            ProviderUnavailable(String::new()),
            UnknownSection(String::new()),
            NotAdmin,
            UnknownPost(0),
            NotApproved,
            MalformedQuery,
            TileOutOfRange,
            UpstreamUnavailable(String::new()),
            CorruptLog(String::new()),
            StorageFailure(String::new()),
            BadRequest(String::new()),
            NotFound,
        ]
    }
}
