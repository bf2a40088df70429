use logbench::normalization::FLAG_UNCLOSED;

/// Placeholder notations observed in model output, one exemplar per notation, with the
/// canonical template each must normalize to.
pub const CANONICAL: &[(&str, &str, &str)] = &[
    ("<>", "session <> opened for user <>", "session <*> opened for user <*>"),
    (
        "named <>",
        "session <session_id> opened for user <user>",
        "session <*> opened for user <*>",
    ),
    (
        "{}",
        "session {} opened for user {user}",
        "session <*> opened for user <*>",
    ),
    ("X", "session XXX opened for user XX", "session <*> opened for user <*>"),
    (
        "<TPL>",
        "session <TPL> opened for user <MSG>",
        "session <*> opened for user <*>",
    ),
    (
        "opening-closing tag pair",
        "session <id>42</id> opened for user <user>root</user>",
        "session <*> opened for user <*>",
    ),
    (
        "<*>",
        "session <*> opened for user <*>",
        "session <*> opened for user <*>",
    ),
    (
        "${}",
        "session ${id} opened for user ${user}",
        "session <*> opened for user <*>",
    ),
    (
        "@ @",
        "session @id@ opened for user @user@",
        "session <*> opened for user <*>",
    ),
    (
        "$ $",
        "session $id$ opened for user $user$",
        "session <*> opened for user <*>",
    ),
    (
        "{{}}",
        "session {{id}} opened for user {{user}}",
        "session <*> opened for user <*>",
    ),
    (
        "[[]]",
        "session [[id]] opened for user [[user]]",
        "session <*> opened for user <*>",
    ),
    ("*", "session * opened for user *", "session <*> opened for user <*>"),
    (
        "$",
        "session $ID opened for user $USER",
        "session <*> opened for user <*>",
    ),
    (
        "[]",
        "session [SESSION_ID] opened for user [user]",
        "session <*> opened for user <*>",
    ),
    (
        "[]+",
        "session [id]+ opened for user [user]+",
        "session <*> opened for user <*>",
    ),
    (
        "$[]",
        "session $[id] opened for user $[user]",
        "session <*> opened for user <*>",
    ),
    (
        "()",
        "session (id) opened for user (USER)",
        "session <*> opened for user <*>",
    ),
    ("%", "session %d opened for user %s", "session <*> opened for user <*>"),
    ("?", "session ? opened for user ?", "session <*> opened for user <*>"),
    (
        "** **",
        "session **id** opened for user **user**",
        "session <*> opened for user <*>",
    ),
    (
        "#",
        "session ### opened for user #user#",
        "session <*> opened for user <*>",
    ),
    (
        "<* *>",
        "session <* *> opened for user <*user*>",
        "session <*> opened for user <*>",
    ),
    (
        "___",
        "session ___ opened for user ___",
        "session <*> opened for user <*>",
    ),
    (
        "' '",
        "session 'session_id' opened for user 'user'",
        "session <*> opened for user <*>",
    ),
    (
        "{{{}}}",
        "session {{{id}}} opened for user {{{user}}}",
        "session <*> opened for user <*>",
    ),
    (
        "<<>>",
        "session <<id>> opened for user <<user>>",
        "session <*> opened for user <*>",
    ),
    ("<>%", "disk usage at <>% on <mount>", "disk usage at <*>% on <*>"),
    (
        "[^_^]",
        "session [^_^] opened for user [^ _^ ]",
        "session <*> opened for user <*>",
    ),
    (
        "&",
        "session &id& opened for user &user&",
        "session <*> opened for user <*>",
    ),
    (
        "...",
        "session ... opened for user ...",
        "session <*> opened for user <*>",
    ),
    ("[0-9]", "retry [0-9] of [0-9]+", "retry <*> of <*>"),
    ("date mask", "YYYY-MM-DD HH:mm:ss job done", "<*> job done"),
    (
        "mixed",
        "session {id} opened for user <user> from $[ip]:%d",
        "session <*> opened for user <*> from <*>:<*>",
    ),
];

/// Notations that are left in place and reported with a residual flag.
pub const FLAGGED: &[(&str, &str, &str)] = &[
    ("no closing bracket", "session <* opened for user <*>", FLAG_UNCLOSED),
    (
        "no closing bracket, named",
        "session <id opened for user <*>",
        FLAG_UNCLOSED,
    ),
    ("no closing bracket at end", "session closed for user <*", FLAG_UNCLOSED),
];
