//! Self-contained HTML heatmaps: red for positive scores, blue for negative,
//! opacity scaled by the largest magnitude in the record.

use std::fmt::Write as _;

use smv_core::realize::display_token;
use smv_core::SaliencyRecord;

fn escape(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for c in text.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&#39;"),
            _ => out.push(c),
        }
    }
    out
}

/// Background for one token, or `None` when it gets no tint.
pub fn background(score: f64, max_abs: f64) -> Option<String> {
    if score == 0.0 || max_abs == 0.0 {
        return None;
    }
    let alpha = (score.abs() / max_abs).min(1.0);
    let (r, g, b) = if score > 0.0 { (255, 0, 0) } else { (0, 0, 255) };
    Some(format!("rgba({r}, {g}, {b}, {alpha:.3})"))
}

pub fn render(record: &SaliencyRecord) -> String {
    let max_abs = record.scores().iter().fold(0.0f64, |m, s| m.max(s.abs()));
    let mut body = String::new();
    for (token, &score) in record.tokens().iter().zip(record.scores()) {
        let title = format!("{score:.4}");
        let text = escape(display_token(token));
        match background(score, max_abs) {
            Some(bg) => write!(body, "<span class=\"t\" style=\"background-color: {bg}\" title=\"{title}\">{text}</span> "),
            None => write!(body, "<span class=\"t\" title=\"{title}\">{text}</span> "),
        }
        .expect("writing to a String");
    }
    format!(
        "<!DOCTYPE html>\n<html>\n<head>\n<meta charset=\"utf-8\">\n<title>{id}</title>\n<style>\n\
         body {{ font-family: sans-serif; max-width: 48em; margin: 2em auto; line-height: 2; }}\n\
         .t {{ padding: 0.1em 0.15em; border-radius: 0.2em; }}\n\
         header {{ border-bottom: 1px solid #ccc; margin-bottom: 1em; }}\n\
         </style>\n</head>\n<body>\n<header>\n<h1>{id}</h1>\n\
         <p>Predicted label: <b>{pred}</b> &middot; True label: <b>{truth}</b></p>\n</header>\n\
         <p>{body}</p>\n</body>\n</html>\n",
        id = escape(record.id()),
        pred = escape(record.predicted_label()),
        truth = escape(record.true_label()),
        body = body.trim_end(),
    )
}

/// File name for a record id: unsafe characters become `_`.
pub fn file_name(id: &str) -> String {
    let stem: String = id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') { c } else { '_' })
        .collect();
    format!("{}.html", stem.trim_start_matches('.'))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(scores: &[f64]) -> SaliencyRecord {
        SaliencyRecord::new(
            "r/1",
            "imdb",
            (0..scores.len()).map(|i| format!("w{i}")).collect(),
            scores.to_vec(),
            "negative",
            "positive",
            vec!["negative".into(), "positive".into()],
        )
        .unwrap()
    }

    #[test]
    fn tints() {
        assert_eq!(background(0.0, 1.0), None);
        assert_eq!(background(0.8, 0.8).unwrap(), "rgba(255, 0, 0, 1.000)");
        assert_eq!(background(-0.4, 0.8).unwrap(), "rgba(0, 0, 255, 0.500)");
    }

    #[test]
    fn page_shows_labels_and_both_hues() {
        let html = render(&record(&[0.5, 0.0, -0.25]));
        assert!(html.contains("Predicted label: <b>negative</b>"));
        assert!(html.contains("True label: <b>positive</b>"));
        assert!(html.contains("rgba(255, 0, 0, 1.000)"));
        assert!(html.contains("rgba(0, 0, 255, 0.500)"));
        assert!(html.contains("<span class=\"t\" title=\"0.0000\">w1</span>"));
    }

    #[test]
    fn ids_become_safe_names() {
        assert_eq!(file_name("r/1"), "r_1.html");
        assert_eq!(file_name("../x"), "_x.html");
    }
}
