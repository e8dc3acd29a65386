use super::AutodiffError;

/// Boolean attention mask of `[groups, tq, tk]`; `true` means the query may
/// attend to the key.
///
/// An attention batch of size `B` maps batch index `bi` onto group
/// `bi / (B / groups)`, so a per-sequence mask also covers the
/// `[batch * heads]` layout produced by head splitting.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttentionMask {
    groups: usize,
    tq: usize,
    tk: usize,
    allowed: Vec<bool>,
}

impl AttentionMask {
    /// One shared `[tq, tk]` mask.
    pub fn shared(tq: usize, tk: usize, allowed: Vec<bool>) -> Result<Self, AutodiffError> {
        Self::grouped(1, tq, tk, allowed)
    }

    pub fn grouped(
        groups: usize,
        tq: usize,
        tk: usize,
        allowed: Vec<bool>,
    ) -> Result<Self, AutodiffError> {
        if groups == 0 || allowed.len() != groups * tq * tk {
            return Err(AutodiffError::Shape(format!(
                "mask of {} cells does not match [{groups}, {tq}, {tk}]",
                allowed.len()
            )));
        }
        Ok(Self {
            groups,
            tq,
            tk,
            allowed,
        })
    }

    /// Lower-triangular mask: position `i` sees keys `0..=i`.
    pub fn causal(t: usize) -> Self {
        let allowed = (0..t * t).map(|c| c % t <= c / t).collect();
        Self {
            groups: 1,
            tq: t,
            tk: t,
            allowed,
        }
    }

    /// Per-sequence key padding: sequence `b` exposes its first `key_lens[b]` keys.
    pub fn key_padding(key_lens: &[usize], tq: usize, tk: usize) -> Self {
        let mut allowed = Vec::with_capacity(key_lens.len() * tq * tk);
        for &len in key_lens {
            for _ in 0..tq {
                allowed.extend((0..tk).map(|j| j < len));
            }
        }
        Self {
            groups: key_lens.len(),
            tq,
            tk,
            allowed,
        }
    }

    /// Cell-wise AND. Either side may be shared (one group).
    pub fn and(&self, other: &AttentionMask) -> Result<Self, AutodiffError> {
        if self.tq != other.tq || self.tk != other.tk {
            return Err(AutodiffError::Shape("mask dimensions differ".into()));
        }
        let groups = match (self.groups, other.groups) {
            (a, b) if a == b => a,
            (1, b) => b,
            (a, 1) => a,
            (a, b) => {
                return Err(AutodiffError::Shape(format!(
                    "cannot combine {a} and {b} mask groups"
                )))
            }
        };
        let cells = self.tq * self.tk;
        let pick = |m: &AttentionMask, g: usize, c: usize| {
            m.allowed[(if m.groups == 1 { 0 } else { g }) * cells + c]
        };
        let allowed = (0..groups * cells)
            .map(|i| pick(self, i / cells, i % cells) && pick(other, i / cells, i % cells))
            .collect();
        Ok(Self {
            groups,
            tq: self.tq,
            tk: self.tk,
            allowed,
        })
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.groups, self.tq, self.tk)
    }

    pub(crate) fn check(&self, batch: usize, tq: usize, tk: usize) -> Result<(), AutodiffError> {
        if self.tq != tq || self.tk != tk || batch % self.groups != 0 {
            return Err(AutodiffError::Shape(format!(
                "mask [{}, {}, {}] incompatible with attention batch {batch}, [{tq}, {tk}]",
                self.groups, self.tq, self.tk
            )));
        }
        Ok(())
    }

    #[inline]
    pub(crate) fn allowed(&self, bi: usize, batch: usize, i: usize, j: usize) -> bool {
        let group = if self.groups == 1 {
            0
        } else {
            bi / (batch / self.groups)
        };
        self.allowed[(group * self.tq + i) * self.tk + j]
    }
}
