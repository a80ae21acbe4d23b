/// Dense displacement field `F(p) = M(p) - p` with a matching-cost and a
/// validity channel.
///
/// `lattice` records the stride of the pixel grid the field was computed
/// on; only pixels with both coordinates divisible by it can be valid.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    width: usize,
    height: usize,
    lattice: usize,
    flow: Vec<[f32; 2]>,
    cost: Vec<f32>,
    valid: Vec<bool>,
}

impl FlowField {
    /// All-invalid field.
    pub fn new(width: usize, height: usize) -> Self {
        assert!(width >= 1 && height >= 1, "flow field needs a non-empty extent");
        let n = width * height;
        FlowField {
            width,
            height,
            lattice: 1,
            flow: vec![[0.0; 2]; n],
            cost: vec![f32::INFINITY; n],
            valid: vec![false; n],
        }
    }

    /// Field with every pixel valid, cost zero.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [f32; 2]) -> Self {
        let mut ff = FlowField::new(width, height);
        for y in 0..height {
            for x in 0..width {
                ff.set(x, y, f(x, y), 0.0);
            }
        }
        ff
    }

    /// Field from optional per-pixel flows in row-major order.
    pub fn from_options(width: usize, height: usize, flows: &[Option<[f32; 2]>]) -> Self {
        assert_eq!(flows.len(), width * height);
        let mut ff = FlowField::new(width, height);
        for (i, f) in flows.iter().enumerate() {
            if let Some(f) = f {
                ff.flow[i] = *f;
                ff.cost[i] = 0.0;
                ff.valid[i] = true;
            }
        }
        ff
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn lattice(&self) -> usize {
        self.lattice
    }

    pub fn set_lattice(&mut self, lattice: usize) {
        self.lattice = lattice.max(1);
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize) -> usize {
        y * self.width + x
    }

    #[inline]
    pub fn is_valid(&self, x: usize, y: usize) -> bool {
        self.valid[self.index(x, y)]
    }

    /// Flow at a pixel if valid.
    #[inline]
    pub fn get(&self, x: usize, y: usize) -> Option<[f32; 2]> {
        let i = self.index(x, y);
        self.valid[i].then(|| self.flow[i])
    }

    #[inline]
    pub fn flow_at(&self, x: usize, y: usize) -> [f32; 2] {
        self.flow[self.index(x, y)]
    }

    #[inline]
    pub fn cost_at(&self, x: usize, y: usize) -> f32 {
        self.cost[self.index(x, y)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, flow: [f32; 2], cost: f32) {
        let i = self.index(x, y);
        self.flow[i] = flow;
        self.cost[i] = cost;
        self.valid[i] = true;
    }

    pub fn invalidate(&mut self, x: usize, y: usize) {
        let i = self.index(x, y);
        self.valid[i] = false;
        self.cost[i] = f32::INFINITY;
    }

    pub fn flows(&self) -> &[[f32; 2]] {
        &self.flow
    }

    pub fn costs(&self) -> &[f32] {
        &self.cost
    }

    pub fn valid_mask(&self) -> &[bool] {
        &self.valid
    }

    pub fn count_valid(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    /// Keep only pixels where `mask` is set.
    pub fn retain(&mut self, mask: &[bool]) {
        assert_eq!(mask.len(), self.valid.len());
        for (i, &keep) in mask.iter().enumerate() {
            if !keep {
                self.valid[i] = false;
                self.cost[i] = f32::INFINITY;
            }
        }
    }

    pub(crate) fn channels_mut(&mut self) -> (&mut [[f32; 2]], &mut [f32], &mut [bool]) {
        (&mut self.flow, &mut self.cost, &mut self.valid)
    }
}
