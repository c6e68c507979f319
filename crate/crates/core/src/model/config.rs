use crate::error::{Error, Result};

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub embed_dim: usize,
    pub lstm_hidden: usize,
    pub lstm_layers: usize,
    pub attn_hidden: usize,
    pub fc_dims: Vec<usize>,
    pub num_classes: usize,
    pub dropout: f64,
    pub max_seq_len: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            embed_dim: 64,
            lstm_hidden: 128,
            lstm_layers: 2,
            attn_hidden: 64,
            fc_dims: vec![128, 64],
            num_classes: 2,
            dropout: 0.4,
            max_seq_len: 64,
        }
    }
}

/// Parameter counts per architectural component.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ComponentCounts {
    pub embedding: usize,
    pub bilstm: usize,
    pub attention: usize,
    pub fully_connected: usize,
    pub output: usize,
}

impl ComponentCounts {
    pub fn total(&self) -> usize {
        self.embedding + self.bilstm + self.attention + self.fully_connected + self.output
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("embed_dim", self.embed_dim),
            ("lstm_hidden", self.lstm_hidden),
            ("lstm_layers", self.lstm_layers),
            ("attn_hidden", self.attn_hidden),
            ("max_seq_len", self.max_seq_len),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::validation(format!("model config: {name} must be positive")));
        }
        if self.num_classes < 2 {
            return Err(Error::validation("model config: num_classes must be at least 2"));
        }
        if self.fc_dims.contains(&0) {
            return Err(Error::validation("model config: fc_dims must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::validation("model config: dropout must be in [0, 1)"));
        }
        Ok(())
    }

    /// Width of the BiLSTM output rows.
    pub fn encoder_dim(&self) -> usize {
        2 * self.lstm_hidden
    }

    /// Closed-form parameter counts.
    pub fn component_counts(&self) -> Result<ComponentCounts> {
        self.validate()?;
        let e = self.embed_dim;
        let h = self.lstm_hidden;
        let embedding = (e + e) + 2 * e;
        let bilstm = (0..self.lstm_layers)
            .map(|l| {
                let input = if l == 0 { e } else { 2 * h };
                2 * (4 * h * (input + h) + 8 * h)
            })
            .sum();
        let attention = (2 * h * self.attn_hidden + self.attn_hidden) + (self.attn_hidden + 1);
        let mut fully_connected = 0;
        let mut input = 2 * h;
        for &d in &self.fc_dims {
            fully_connected += input * d + d + 2 * d;
            input = d;
        }
        let output = input * self.num_classes + self.num_classes;
        Ok(ComponentCounts {
            embedding,
            bilstm,
            attention,
            fully_connected,
            output,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_counts() {
        let c = ModelConfig::default().component_counts().unwrap();
        assert_eq!(c.embedding, 256);
        assert_eq!(c.bilstm, 593_920);
        assert_eq!(c.attention, (256 * 64 + 64) + (64 + 1));
        assert_eq!(c.attention, 16_513);
        assert_eq!(c.fully_connected, 41_536);
        assert_eq!(c.output, 130);
        assert_eq!(c.total(), 652_355);
    }

    #[test]
    fn bilstm_layers_decompose() {
        // Layer one sees the 64-dim embedding, layer two the 256-dim concatenation.
        let layer1 = 2 * (4 * 128 * (64 + 128) + 8 * 128);
        let layer2 = 2 * (4 * 128 * (256 + 128) + 8 * 128);
        assert_eq!(layer1, 198_656);
        assert_eq!(layer2, 395_264);
        assert_eq!(layer1 + layer2, 593_920);
    }

    #[test]
    fn non_positive_dims_rejected() {
        let cfg = ModelConfig {
            lstm_hidden: 0,
            ..ModelConfig::default()
        };
        assert!(cfg.component_counts().is_err());
        let cfg = ModelConfig {
            fc_dims: vec![8, 0],
            ..ModelConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
