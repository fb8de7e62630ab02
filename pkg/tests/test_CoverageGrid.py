import itertools

import numpy as np
import pytest

from coveragemarl.CoverageGrid import (Action, AgentState, CollisionError, CoverageEnvironment,
                                       FieldMask, FieldMaskError, GridSpec, apply_action,
                                       apply_joint_action, coverage_count, coverage_overlap_sums,
                                       enumerate_goal_states, fov_cells, fov_mask, global_reward,
                                       individual_reward, joint_action_from_index, joint_action_index,
                                       load_field_mask, objective_H, overlap_count, parse_field_mask,
                                       random_joint_state, render_field, successor_cells)

from conftest import SIM3_MASK, SIM3_TILING


def block(x0, x1, y0, y1):
    return {(x, y) for x in range(x0, x1+1) for y in range(y0, y1+1)}


def test_fov_centre_block(grid775):
    assert fov_cells((3, 3, 1), grid775) == block(2, 4, 2, 4)

def test_fov_clipped_at_corner(grid775):
    assert fov_cells((0, 0, 1), grid775) == {(0, 0), (0, 1), (1, 0), (1, 1)}

def test_fov_narrow_camera_sees_nadir_only():
    grid = GridSpec(7, 7, 5, 1e-3, 1e-3)
    for z in range(1, 6):
        assert fov_cells((3, 3, z), grid) == {(3, 3)}

def test_fov_quarter_pi_tangent_reaches_neighbours():
    grid = GridSpec(7, 7, 5, np.tan(np.pi/4), np.tan(np.pi/4))
    assert fov_cells((3, 3, 1), grid) == block(2, 4, 2, 4)

def test_fov_anisotropic():
    grid = GridSpec(7, 7, 5, 1.0, 2.0)
    assert fov_cells((3, 3, 1), grid) == block(2, 4, 1, 5)

def test_fov_matches_definition_everywhere(grid775):
    for x, y, z in itertools.product(range(7), range(7), range(1, 6)):
        expected = {(qx, qy) for qx in range(7) for qy in range(7)
                    if abs(qx - x) <= z*grid775.tan_theta_1 and abs(qy - y) <= z*grid775.tan_theta_2}
        assert fov_cells((x, y, z), grid775) == expected

def test_fov_monotone_in_altitude(grid775):
    for x, y in itertools.product(range(7), range(7)):
        for z in range(1, 5):
            assert fov_cells((x, y, z), grid775) <= fov_cells((x, y, z+1), grid775)

def test_fov_mask_read_only(grid775):
    mask = fov_mask(AgentState(3, 3, 1), grid775)
    with pytest.raises(ValueError):
        mask[0, 0] = True


def test_coverage_count(grid775):
    field = parse_field_mask(SIM3_MASK, grid775)
    assert coverage_count(((3, 3, 5),), 0, field, grid775) == len(field) == 16
    assert coverage_count(((0, 6, 1),), 0, field, grid775) == 0

def test_coverage_count_partial_field():
    grid = GridSpec(3, 3, 1)
    field = parse_field_mask('#.#\n.#.\n#.#\n', grid)
    assert coverage_count(((1, 1, 1),), 0, field, grid) == 5


def test_overlap_identical_footprints(grid775):
    joint = ((3, 3, 1), (3, 3, 1))
    assert overlap_count(joint, 0, grid775) == overlap_count(joint, 1, grid775) == 9

def test_overlap_disjoint(grid775):
    joint = ((1, 1, 1), (5, 5, 1))
    assert overlap_count(joint, 0, grid775) == overlap_count(joint, 1, grid775) == 0

def test_overlap_shared_column(grid775):
    joint = ((2, 2, 1), (4, 2, 1))
    assert overlap_count(joint, 0, grid775) == 3
    assert overlap_count(joint, 1, grid775) == 3

def test_overlap_field_only_variant(grid775):
    field = parse_field_mask(SIM3_MASK, grid775)
    joint = ((2, 2, 1), (4, 2, 1))
    # Shared column x=3, y=1..3 holds field cells (3,2) and (3,3)
    assert overlap_count(joint, 0, grid775, field=field) == 2
    assert coverage_overlap_sums(joint, field, grid775, overlap_on_field_only=True)[1] == 4

def test_overlap_symmetry_and_zero_iff_disjoint(grid775, rng):
    for _ in range(200):
        joint = tuple(tuple(int(v) for v in (rng.integers(7), rng.integers(7), rng.integers(1, 6))) for _ in range(3))
        for i, j in itertools.combinations(range(3), 2):
            pair = (joint[i], joint[j])
            assert overlap_count(pair, 0, grid775) == overlap_count(pair, 1, grid775)
        total = sum(overlap_count(joint, i, grid775) for i in range(3))
        disjoint = all(not (fov_cells(joint[i], grid775) & fov_cells(joint[j], grid775))
                       for i, j in itertools.combinations(range(3), 2))
        assert (total == 0) == disjoint

def test_overlap_sum_counts_each_agent(grid775):
    field = parse_field_mask(SIM3_MASK, grid775)
    joint = ((3, 3, 1), (3, 3, 1), (3, 3, 1))
    assert coverage_overlap_sums(joint, field, grid775)[1] == 27
    assert sum(overlap_count(joint, i, grid775) for i in range(3)) == 27


def test_objective_stacked_agents():
    grid = GridSpec(3, 3, 2)
    field = parse_field_mask('###\n###\n###\n', grid)
    assert objective_H(((1, 1, 1), (1, 1, 1)), field, grid) == 0

def test_objective_tiling(grid775):
    field = parse_field_mask(SIM3_MASK, grid775)
    assert objective_H(SIM3_TILING, field, grid775) == 16

def test_objective_empty_field(grid775):
    field = parse_field_mask('\n'.join(['.'*7]*7), grid775)
    assert objective_H(((2, 2, 1), (3, 2, 1)), field, grid775) <= 0

def test_objective_permutation_invariant(grid775, rng):
    field = parse_field_mask(SIM3_MASK, grid775)
    for _ in range(50):
        joint = [tuple(int(v) for v in (rng.integers(7), rng.integers(7), rng.integers(1, 6))) for _ in range(3)]
        values = {objective_H(tuple(p), field, grid775) for p in itertools.permutations(joint)}
        assert len(values) == 1


def test_apply_action_moves(grid775):
    assert apply_action((3, 3, 2), Action.Up, grid775) == (3, 3, 3)
    assert apply_action((3, 3, 2), Action.North, grid775) == (3, 4, 2)
    assert apply_action((3, 3, 2), Action.South, grid775) == (3, 2, 2)
    assert apply_action((3, 3, 2), Action.East, grid775) == (4, 3, 2)
    assert apply_action((3, 3, 2), Action.Down, grid775) == (3, 3, 1)

def test_apply_action_blocked(grid775):
    assert apply_action((0, 3, 2), Action.West, grid775) == (0, 3, 2)
    assert apply_action((6, 6, 5), Action.Up, grid775) == (6, 6, 5)
    assert apply_action((4, 4, 1), Action.Down, grid775) == (4, 4, 1)

def test_apply_action_blocked_idempotent(grid775):
    for x, y, z in itertools.product(range(7), range(7), range(1, 6)):
        for a in Action:
            once = apply_action((x, y, z), a, grid775)
            if once == (x, y, z):
                assert apply_action(once, a, grid775) == once

def test_successor_cells_match_apply_action(grid775):
    joint = ((0, 0, 1), (6, 6, 5), (3, 3, 3))
    successors = successor_cells(joint, grid775)
    for i, agent in enumerate(joint):
        for a in Action:
            assert tuple(successors[i, a]) == apply_action(agent, a, grid775)


def test_apply_joint_action_independent_moves(grid775):
    joint = ((1, 1, 1), (5, 5, 1))
    assert apply_joint_action(joint, (Action.East, Action.West), grid775) == ((2, 1, 1), (4, 5, 1))

def test_apply_joint_action_all_blocked(grid775):
    joint = ((0, 0, 1), (6, 6, 5))
    assert apply_joint_action(joint, (Action.West, Action.Up), grid775) == joint

def test_apply_joint_action_collision(grid775):
    with pytest.raises(CollisionError):
        apply_joint_action(((2, 2, 1), (3, 2, 1)), (Action.East, Action.Down), grid775)


def test_joint_action_index_convention():
    assert joint_action_index((Action.North, Action.North)) == 0
    assert joint_action_index((Action.North, Action.West)) == 1
    assert joint_action_index((Action.West, Action.North)) == 6
    assert joint_action_from_index(215, 3) == (Action.Down,)*3
    for index in range(36):
        assert joint_action_index(joint_action_from_index(index, 2)) == index


def test_global_reward_tiling(sim3_env):
    assert global_reward(SIM3_TILING, sim3_env.field, sim3_env.grid, 0.1) == 0.1
    assert sim3_env(SIM3_TILING) == 0.1

def test_global_reward_single_overlap(sim3_env):
    # (2,2,1) -> (3,2,1) shares column x=4 with (5,2,1)
    joint = ((3, 2, 1), (5, 2, 1), (3, 5, 1))
    assert sim3_env.sums(joint)[1] > 0
    assert sim3_env(joint) == 0

def test_global_reward_coverage_bound(grid775):
    field = parse_field_mask(SIM3_MASK, grid775)
    joint = ((2, 2, 1), (5, 2, 1))
    coverage, overlap = coverage_overlap_sums(joint, field, grid775)
    assert overlap == 0
    assert global_reward(joint, field, grid775, 0.1, fb=coverage) == 0.1
    assert global_reward(joint, field, grid775, 0.1, fb=coverage+1) == 0

def test_global_reward_two_values(sim3_env, rng):
    for _ in range(200):
        joint = random_joint_state(sim3_env, rng)
        assert sim3_env(joint) in (0.0, 0.1)


def test_individual_reward_disjoint(grid775):
    field = parse_field_mask(SIM3_MASK, grid775)
    joint = ((2, 2, 1), (5, 2, 1))
    assert individual_reward(joint, 0, field, grid775) == coverage_count(joint, 0, field, grid775)
    assert individual_reward(joint, 1, field, grid775) == coverage_count(joint, 1, field, grid775)

def test_individual_reward_stacked():
    grid = GridSpec(3, 3, 2)
    field = parse_field_mask('###\n###\n###\n', grid)
    joint = ((1, 1, 1), (1, 1, 1))
    assert individual_reward(joint, 0, field, grid) == pytest.approx(8.91)


def test_parse_empty_field():
    field = parse_field_mask('\n'.join(['.'*7]*7))
    assert len(field) == 0
    assert (field.width, field.height) == (7, 7)

def test_parse_single_cell():
    rows = ['.'*7]*7
    rows[2] = '...#...'
    assert parse_field_mask('\n'.join(rows)).cells == {(3, 2)}

def test_parse_sim3_mask(grid775):
    field = parse_field_mask(SIM3_MASK, grid775)
    assert len(field) == SIM3_MASK.count('#') == 16
    assert field.weights.sum() == 16

@pytest.mark.parametrize('text', ['...\n..\n...', '..x\n...\n...', ''])
def test_parse_malformed(text):
    with pytest.raises(FieldMaskError):
        parse_field_mask(text)

def test_parse_dimension_mismatch(grid775):
    with pytest.raises(FieldMaskError):
        parse_field_mask('.....\n'*5, grid775)

def test_load_field_mask(tmp_path, grid775):
    path = tmp_path / 'mask.txt'
    path.write_text(SIM3_MASK + '\n')
    assert load_field_mask(str(path), grid775).cells == parse_field_mask(SIM3_MASK).cells

def test_field_mask_rejects_outside_cells():
    with pytest.raises(ValueError):
        FieldMask(3, 3, frozenset({(3, 0)}))


def test_grid_validation():
    with pytest.raises(ValueError): GridSpec(0, 7, 5)
    with pytest.raises(ValueError): GridSpec(7, 7, 5, 0.0, 1.0)

def test_environment_validation(grid775):
    field = parse_field_mask(SIM3_MASK, grid775)
    with pytest.raises(ValueError): CoverageEnvironment(grid775, field, 3, reward=0.)
    with pytest.raises(ValueError): CoverageEnvironment(grid775, field, 3, fb=17)
    with pytest.raises(FieldMaskError): CoverageEnvironment(GridSpec(5, 5, 3), field, 3)

def test_random_joint_state_distinct(sim3_env, rng):
    for _ in range(100):
        joint = random_joint_state(sim3_env, rng)
        assert len(set(joint)) == 3
        assert all(sim3_env.grid.contains(agent) for agent in joint)


def test_enumerate_goal_states_tiny(tiny2_env):
    goals = enumerate_goal_states(tiny2_env)
    grid = tiny2_env.grid
    cells = [grid.cell_from_index(c) for c in range(grid.n_cells)]
    brute = [joint for joint in itertools.permutations(cells, 2) if tiny2_env(joint) > 0]
    assert goals == brute
    assert len(goals) == 26
    assert ((0, 1, 1), (2, 1, 1)) in goals

def test_enumerate_goal_states_limit(sim3_env):
    with pytest.raises(ValueError):
        enumerate_goal_states(sim3_env, limit=1000)

def test_render_field(sim3_env):
    picture = render_field(sim3_env, SIM3_TILING).splitlines()
    assert len(picture) == 7
    assert picture[0] == '.......'
    assert picture[2] == '.000111'
    assert '#' not in ''.join(picture)
    assert '*' in render_field(sim3_env, ((3, 3, 1), (4, 3, 1), (0, 6, 1)))
