//! Layered settings: defaults, then a training preset, then explicit keys.
//!
//! ```text
//! cargo run --example settings
//! ```

use persona_esc::config::Settings;
use persona_esc::Strategy;

const TOML: &str = r#"
[train]
preset = "paper"
epochs = 5

[decode]
temperature = 0.7

[decode.alpha_table]
"Self-disclosure" = 1.0

[serve]
port = 9000
"#;

fn main() -> anyhow::Result<()> {
    let s = Settings::from_toml(TOML)?;
    println!("train: lr {} warmup {} epochs {}", s.train.lr_base, s.train.warmup_steps, s.train.epochs);
    println!("decode: T {} top_k {} top_p {}", s.decode.temperature, s.decode.top_k, s.decode.top_p);
    println!("α(Self-disclosure) {}  α(Question) {}", s.decode.alpha_for(Strategy::SelfDisclosure), s.decode.alpha_for(Strategy::Question));
    println!("serve on {}:{}", s.serve.host, s.serve.port);

    match Settings::from_toml("[decode]\ntop_k = \"ten\"\n") {
        Err(e) => println!("rejected: {e}"),
        Ok(_) => unreachable!(),
    }
    Ok(())
}
