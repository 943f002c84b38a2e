use serde::Serialize;

use super::InitError;

/// One I/O process per this many ranks.
pub const IO_RATIO: f64 = 1.0 / 1000.0;
const IO_BLOCK: usize = 1000;
const MB: u64 = 1 << 20;

/// Lowest rank of every consecutive block of 1000.
pub fn choose_io_processes(n_ranks: usize) -> Vec<usize> {
    (0..n_ranks.max(1)).step_by(IO_BLOCK).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IoConfig {
    pub stripe_count: u32,
    pub stripe_size: u64,
    pub io_ratio: f64,
}

/// Striping for a component's history output. `"default"` is the
/// filesystem's own setting; the large-volume components stripe widest.
pub fn emit_io_config(component: &str) -> Result<IoConfig, InitError> {
    let (stripe_count, stripe_size) = match component.to_ascii_lowercase().as_str() {
        "default" => (1, MB),
        "atm" | "ocn" => (32, 4 * MB),
        "ice" => (16, 4 * MB),
        "lnd" | "rof" => (8, MB),
        "cpl" | "glc" | "wav" => (4, MB),
        _ => return Err(InitError::UnknownComponent(component.to_string())),
    };
    Ok(IoConfig { stripe_count, stripe_size, io_ratio: IO_RATIO })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn io_process_counts() {
        assert_eq!(choose_io_processes(1000), vec![0]);
        assert_eq!(choose_io_processes(1), vec![0]);
        assert_eq!(choose_io_processes(1001), vec![0, 1000]);
        assert_eq!(choose_io_processes(610_800).len(), 611);
    }

    #[test]
    fn configs_are_admissible() {
        assert_eq!(
            emit_io_config("default").unwrap(),
            IoConfig { stripe_count: 1, stripe_size: MB, io_ratio: IO_RATIO }
        );
        for c in ["atm", "ocn", "ice", "lnd", "rof", "cpl", "glc", "wav"] {
            let cfg = emit_io_config(c).unwrap();
            assert!([4, 8, 16, 32].contains(&cfg.stripe_count), "{c}");
            assert!([MB, 4 * MB].contains(&cfg.stripe_size), "{c}");
            assert_eq!(cfg.io_ratio, 0.001);
        }
        assert!(matches!(emit_io_config("xyz"), Err(InitError::UnknownComponent(_))));
    }
}
