//! Movement shared by the grid worlds.

pub const ACTION_COUNT: usize = 5;

/// `(drow, dcol)` for up, down, left, right, stay.
const MOVES: [(i64, i64); ACTION_COUNT] = [(-1, 0), (1, 0), (0, -1), (0, 1), (0, 0)];

pub type Cell = (i64, i64);

/// Applies a movement action, clamping at the border.
pub fn apply_move(cell: Cell, action: usize, rows: usize, cols: usize) -> Cell {
    let (dr, dc) = MOVES[action];
    (
        (cell.0 + dr).clamp(0, rows as i64 - 1),
        (cell.1 + dc).clamp(0, cols as i64 - 1),
    )
}

pub fn index(cell: Cell, cols: usize) -> usize {
    cell.0 as usize * cols + cell.1 as usize
}

pub fn chebyshev(a: Cell, b: Cell) -> i64 {
    (a.0 - b.0).abs().max((a.1 - b.1).abs())
}

pub fn manhattan(a: Cell, b: Cell) -> i64 {
    (a.0 - b.0).abs() + (a.1 - b.1).abs()
}

/// Cells reachable in one non-stay move.
pub fn neighbours(cell: Cell, rows: usize, cols: usize) -> impl Iterator<Item = Cell> {
    MOVES[..4].iter().filter_map(move |(dr, dc)| {
        let next = (cell.0 + dr, cell.1 + dc);
        let inside = next.0 >= 0 && next.1 >= 0 && next.0 < rows as i64 && next.1 < cols as i64;
        inside.then_some(next)
    })
}

/// Normalised `(row, col)` coordinates appended to grid observations.
pub fn push_coords(out: &mut Vec<f64>, cell: Cell, rows: usize, cols: usize) {
    out.push(cell.0 as f64 / (rows.max(2) - 1) as f64);
    out.push(cell.1 as f64 / (cols.max(2) - 1) as f64);
}
